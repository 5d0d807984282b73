//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied parameter violates a precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Two inputs that must agree in length do not.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    /// A quantity required to be defined is degenerate (e.g. c_n = 0).
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidParameter(msg.into())
    }
}
