use thiserror::Error;

/// Errors raised by the valuation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("innovation covariance is not positive definite at date index {index}")]
    NotPositiveDefinite { index: usize },

    #[error("evaluation paths reuse the training seed {0}")]
    SeedReuse(u64),

    #[error("non-finite training loss at date {date}, batch {batch}: {detail}")]
    NonFiniteLoss { date: usize, batch: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}
