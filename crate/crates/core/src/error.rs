//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by solvers, geometry construction, and I/O.
#[derive(Debug, Error)]
pub enum GwError {
    /// A caller-supplied value violates a precondition. The message names
    /// the offending input (row index, field, shape) wherever possible.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An object was used outside its valid lifecycle (e.g. a backward tape
    /// that does not match the forward pass it claims to come from).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A solver produced non-finite values or failed to make progress.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GwError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GwError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        GwError::Numerical(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>, context: &str) -> Self {
        GwError::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
            context: context.to_string(),
        }
    }

    /// True for failures of the numerics rather than of the call contract;
    /// the CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, GwError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, GwError>;
