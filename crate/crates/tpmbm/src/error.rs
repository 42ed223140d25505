//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, filtering and evaluation.
#[derive(Debug, Error)]
pub enum TrackingError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine failed to reach its target accuracy.
    #[error("numerical failure: {what} (residual {residual:.3e})")]
    NumericalFailure { what: String, residual: f64 },

    /// No feasible assignment exists for the given cost matrix.
    #[error("assignment problem is infeasible")]
    Infeasible,

    /// An out-of-sequence time stamp falls outside the usable window.
    #[error("out-of-sequence window violation: {0}")]
    Window(String),

    /// An operation was applied to a posterior in the wrong state
    /// (e.g. an in-sequence update on a retrodicted posterior).
    #[error("invalid posterior state: {0}")]
    InvalidState(String),

    /// Configuration file problems, with line/field diagnostics.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failures while reading configs or writing outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TrackingError>;

impl TrackingError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TrackingError::InvalidArgument(msg.into())
    }
}
