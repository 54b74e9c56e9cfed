use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max |m - m^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid rates: {0}")]
    InvalidRates(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("steady state is not unique: kernel dimension {dimension} (expected 1)")]
    DegenerateKernel { dimension: usize },

    #[error("first-harmonic response is singular at {freq_mhz} MHz")]
    SingularResponse { freq_mhz: f64 },

    #[error("matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("density matrix has zero trace")]
    ZeroTrace,

    #[error("population variations do not sum to zero (sum = {sum:e})")]
    UnnormalizedInput { sum: f64 },

    #[error("extraction design matrix is rank deficient for the {level} level")]
    SingularExtraction { level: &'static str },

    #[error("linear solve failed: {0}")]
    SolveFailed(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
