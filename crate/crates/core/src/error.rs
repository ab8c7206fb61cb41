use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row norm {norm} exceeds 1")]
    NormViolation { norm: f64 },

    #[error("summary is empty")]
    Empty,

    #[error("query budget of {limit} exhausted")]
    BudgetExhausted { limit: usize },

    #[error("solver contract violated: {0}")]
    Contract(String),

    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
