use thiserror::Error;

/// Errors produced by the guidance library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdgError {
    #[error("cannot normalize a vector with norm {norm:e}")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("singular Gram matrix: volume gradient is not finite")]
    SingularGram,

    #[error("batch must contain at least two triplets, got {0}")]
    EmptyBatch(usize),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("timestep order violated: t_prev = {t_prev} > t = {t}")]
    TimestepOrder { t: usize, t_prev: usize },

    #[error("unknown concept {index} (world has {count})")]
    UnknownConcept { index: usize, count: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("input must be nonempty")]
    EmptyInput,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("input contains non-finite values")]
    NonFiniteInput,
}

pub type Result<T> = std::result::Result<T, MdgError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(MdgError::DimensionMismatch { expected, got })
    }
}
