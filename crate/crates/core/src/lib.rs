//! Spin-3/2 color-center model: spin Hamiltonians, density-matrix kinetics
//! of the optical cycle, microwave (ODMR) response, the secular rate model
//! and spin-multipole analysis.
//!
//! Units throughout: frequencies and Hamiltonians in MHz, fields in mT,
//! rates in 1/us, times in us.

pub mod error;
pub mod hamiltonian;
pub mod kinetics;
pub mod multipoles;
pub mod odmr;
pub mod rate_model;
pub mod spin_algebra;

pub use error::{Error, Result};
pub use hamiltonian::{CenterParams, DriveAxis, Level, Transition, TransitionTable};
pub use kinetics::{GeneratorMatrix, RateParams, SpinState};
pub use multipoles::{Calibration, Extraction, HusimiGrid, PeakAreaSet, TransitionKey};
pub use odmr::{DriveParams, MwResponse, OdmrResult};
pub use rate_model::{PopulationVariation, TransferMatrices};
pub use spin_algebra::{ComplexMat4, ComplexVec4, EigenSystem, SpinOperators};

pub use nalgebra;
pub use num_complex::Complex64;
