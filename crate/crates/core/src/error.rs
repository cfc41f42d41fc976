use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("point {0} lies outside [0, 1]")]
    OutOfDomain(f64),

    #[error("density is not normalized: integral = {integral}")]
    NotNormalized { integral: f64 },

    #[error("density ratio is singular: f vanishes where f0 is positive")]
    RatioSingularity,

    #[error("MAP iteration did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("Metropolis chain rejected every proposal")]
    ChainStuck,

    #[error("importance sampler degenerate: effective sample size {ess:.2} < {min}")]
    LowEffectiveSampleSize { ess: f64, min: f64 },

    #[error("every model has zero marginal likelihood")]
    ZeroEvidence,

    #[error("family has {size} members; exhaustive search supports at most {limit}")]
    FamilyTooLarge { size: usize, limit: usize },

    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
