//! Ground- and excited-state spin Hamiltonians in a transverse field.
//!
//! `H = gyro * B_x * S_x + D (S_z^2 - 5/4)`, in MHz, with `B_x` in mT.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_algebra::{hermitian_eig, ComplexMat4, EigenSystem, SpinOperators};

/// Bohr magneton over Planck's constant, MHz per mT.
pub const MU_B_OVER_H: f64 = 13.9962;

/// Optical level of the defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "g")]
    Ground,
    #[serde(rename = "e")]
    Excited,
}

impl Level {
    pub const BOTH: [Level; 2] = [Level::Ground, Level::Excited];

    pub fn short_name(self) -> &'static str {
        match self {
            Level::Ground => "g",
            Level::Excited => "e",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Ground => "ground",
            Level::Excited => "excited",
        })
    }
}

/// Spin operator the microwave field couples to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveAxis {
    X,
    #[default]
    Y,
    Z,
}

impl DriveAxis {
    pub fn operator(self) -> ComplexMat4 {
        let ops = SpinOperators::get();
        match self {
            DriveAxis::X => ops.sx,
            DriveAxis::Y => ops.sy,
            DriveAxis::Z => ops.sz,
        }
    }
}

/// Zero-field splittings and g-factors of the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterParams {
    /// Ground-state zero-field splitting, MHz.
    pub d_g: f64,
    /// Excited-state zero-field splitting, MHz.
    pub d_e: f64,
    /// Ground-state g-factor.
    pub g_ground: f64,
    /// Excited-state g-factor.
    pub g_excited: f64,
}

impl Default for CenterParams {
    fn default() -> Self {
        CenterParams { d_g: 35.0, d_e: 220.0, g_ground: 2.0, g_excited: 2.0 }
    }
}

impl CenterParams {
    pub fn zfs(&self, level: Level) -> f64 {
        match level {
            Level::Ground => self.d_g,
            Level::Excited => self.d_e,
        }
    }

    pub fn g_factor(&self, level: Level) -> f64 {
        match level {
            Level::Ground => self.g_ground,
            Level::Excited => self.g_excited,
        }
    }

    /// Zeeman frequency per unit field, MHz/mT.
    pub fn gyro(&self, level: Level) -> f64 {
        self.g_factor(level) * MU_B_OVER_H
    }

    /// Dimensionless field `b = g mu_B B_x / (h D)` for `level`.
    pub fn reduced_field(&self, level: Level, bx: f64) -> f64 {
        self.gyro(level) * bx / self.zfs(level)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_g", self.d_g), ("d_e", self.d_e), ("g_ground", self.g_ground), ("g_excited", self.g_excited)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Spin Hamiltonian of `level` in MHz.
pub fn build_hamiltonian(level: Level, params: &CenterParams, bx: f64) -> ComplexMat4 {
    let ops = SpinOperators::get();
    let zeeman = params.gyro(level) * bx;
    ops.sx.scale(zeeman) + ops.quadrupole_op().scale(params.zfs(level))
}

/// One allowed or forbidden microwave transition between eigenstates `i < j`
/// (0-based, descending energy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub i: usize,
    pub j: usize,
    /// `E_i - E_j`, MHz.
    pub freq: f64,
    /// `|<i| S_drive |j>|^2`.
    pub m2: f64,
    /// Twice the large-field `S_x` projections of states `i` and `j`.
    pub label: (i8, i8),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionTable {
    pub level: Level,
    pub bx: f64,
    pub transitions: Vec<Transition>,
}

impl TransitionTable {
    pub fn get(&self, i: usize, j: usize) -> Option<&Transition> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.transitions.iter().find(|t| t.i == i && t.j == j)
    }
}

/// Twice the `S_x` projection each descending-energy eigenstate connects to
/// as `B_x -> +inf` (the order is reversed for negative fields). The level
/// ordering has no crossings for `B_x > 0`, so the labels are adiabatic.
pub fn asymptotic_labels(bx: f64) -> [i8; 4] {
    if bx < 0.0 {
        [-3, -1, 1, 3]
    } else {
        [3, 1, -1, -3]
    }
}

/// Diagonalizes `H_level(bx)`; the result is tagged with level and field.
pub fn eigensystem(level: Level, params: &CenterParams, bx: f64) -> Result<EigenSystem> {
    Ok(hermitian_eig(&build_hamiltonian(level, params, bx))?.with_tag(level, bx))
}

/// All six transitions of `level` for a drive along `S_y`.
pub fn transition_table(level: Level, params: &CenterParams, bx: f64) -> Result<TransitionTable> {
    transition_table_with_axis(level, params, bx, DriveAxis::Y)
}

pub fn transition_table_with_axis(level: Level, params: &CenterParams, bx: f64, axis: DriveAxis) -> Result<TransitionTable> {
    let eig = eigensystem(level, params, bx)?;
    Ok(transitions_from_eig(&eig, level, bx, axis))
}

pub(crate) fn transitions_from_eig(eig: &EigenSystem, level: Level, bx: f64, axis: DriveAxis) -> TransitionTable {
    let op = axis.operator();
    let labels = asymptotic_labels(bx);
    let mut transitions = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            let element: Complex64 = eig.matrix_element(&op, i, j);
            transitions.push(Transition {
                i,
                j,
                freq: (eig.energies[i] - eig.energies[j]).max(0.0),
                m2: element.norm_sqr(),
                label: (labels[i], labels[j]),
            });
        }
    }
    TransitionTable { level, bx, transitions }
}

/// Fields above which Zeeman energy dominates the zero-field splitting,
/// `h D / (g mu_B)`, for ground and excited state (mT).
pub fn crossover_fields(params: &CenterParams) -> (f64, f64) {
    (params.d_g / params.gyro(Level::Ground), params.d_e / params.gyro(Level::Excited))
}

/// Eigensystems of `level` on a field grid.
pub fn level_sweep(level: Level, params: &CenterParams, b_grid: &[f64]) -> Result<Vec<EigenSystem>> {
    if b_grid.is_empty() {
        return Err(Error::InvalidParameter("field grid is empty".into()));
    }
    b_grid.iter().map(|&bx| eigensystem(level, params, bx)).collect()
}
