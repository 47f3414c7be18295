use thiserror::Error;

/// Errors raised by the library. Numerical warnings that do not abort a
/// computation (degenerate designs, ridge jitter, zero-hit Monte Carlo
/// estimates) are reported as fields on the result types instead.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {x} lies outside the unit domain")]
    Domain { x: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid rate spec: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("factorization failed after jitter escalation (final jitter {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("sampler aborted: {0}")]
    Sampler(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
