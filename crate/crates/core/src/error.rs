use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid dimensions {nlat}x{nlon}: both must be >= 1")]
    BadGridDims { nlat: usize, nlon: usize },

    #[error("grid mismatch: expected {expected_nlat}x{expected_nlon}, got {got_nlat}x{got_nlon}")]
    GridMismatch {
        expected_nlat: usize,
        expected_nlon: usize,
        got_nlat: usize,
        got_nlon: usize,
    },

    #[error("field has {got} values but the grid holds {expected} points")]
    BadFieldLength { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("member count mismatch: expected {expected}, got {got}")]
    MemberMismatch { expected: usize, got: usize },

    #[error("split n1={n1} + n2={n2} exceeds dataset length {len}")]
    BadSplit { n1: usize, n2: usize, len: usize },

    #[error(
        "level alpha={alpha} infeasible for calibration size {n2}: \
         ceil((n2+1)(1-alpha)) = {k} > n2"
    )]
    InfeasibleLevel { alpha: f64, n2: usize, k: usize },

    #[error("singular normal equations at grid location {location}; enable ridge to regularize")]
    SingularLocation { location: usize },

    #[error("covariance factorization failed even after jitter retries")]
    Factorization,

    #[error("training failed: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
