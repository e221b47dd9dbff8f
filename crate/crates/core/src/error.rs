use thiserror::Error;

/// Errors raised by the numerical and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite integrand value {value} at configuration {configuration}")]
    NonFinite { value: f64, configuration: String },

    #[error("subset enumeration over {size} points exceeds the cap of {cap}")]
    SubsetBlowUp { size: usize, cap: usize },

    #[error("point {0} is not a member of the configuration")]
    NotMember(String),

    #[error("truncation too large: {size} states exceeds {cap}")]
    TruncationTooLarge { size: usize, cap: usize },

    #[error("tolerance {tol:e} not reached within {cap} iterations (achieved residual {residual:e})")]
    ToleranceNotReached { tol: f64, cap: usize, residual: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("non-ergodic environment")]
    NonErgodic,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("mismatched record grids: {0}")]
    RecordGrid(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid environment chain: {0}")]
    InvalidEnvChain(String),

    #[error("truncations are not nested: {0}")]
    NotNested(String),

    #[error("rate cache audit failed: cached {cached}, recomputed {fresh}")]
    CacheAudit { cached: f64, fresh: f64 },

    #[error("bound vacuous: damping parameter must be positive")]
    BoundVacuous,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
