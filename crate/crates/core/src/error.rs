//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A sequence, tensor, or dataset does not match the active model shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An exact-enumeration request exceeds the configured budget.
    #[error("enumeration budget exceeded: {0}")]
    Capacity(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value at sample {index}: {context}")]
    Numeric { index: usize, context: String },

    /// No explicit score entry exists for the requested dataset index.
    #[error("no score entry for dataset index {0}")]
    MissingScore(usize),

    /// An operation was called before the state it depends on exists.
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
