use thiserror::Error;

/// Errors raised by the numerical engines and the verification layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value {value} at node (t={time_index}, x={space_index})")]
    NonFinite {
        time_index: usize,
        space_index: usize,
        value: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("risk-neutral probability {prob} outside (0,1); increase the number of steps")]
    InvalidProbability { prob: f64 },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("implicit step matrix is not an M-matrix at row {row}: {reason}")]
    NotMMatrix { row: usize, reason: String },

    #[error("stability condition violated: {0}")]
    Stability(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
