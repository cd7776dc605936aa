use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),
    #[error("arm {0} has no observations")]
    EmptyHistory(usize),
    #[error("insufficient data: have {have} observations, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Failure reported by an objective. Policies record the trial with an
/// infinite loss and keep going.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed: {0}")]
pub struct EvalError(pub String);

impl EvalError {
    pub fn new(msg: impl Into<String>) -> Self {
        EvalError(msg.into())
    }
}
