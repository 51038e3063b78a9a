use std::io;

use thiserror::Error;

/// Errors raised by the engine and its persistence layer.
#[derive(Debug, Error)]
pub enum DrError {
    /// Invalid or inconsistent configuration (bad arity, mode mismatch, malformed input).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A run would exceed a support, size, or sampling budget.
    #[error("resource error: {0}")]
    Resource(String),
    /// A computed quantity violates an invariant that must hold for a true trajectory.
    #[error("numeric integrity error: {0}")]
    Integrity(String),
    /// A snapshot could not be restored.
    #[error("load error: {0}")]
    Load(String),
    /// The operation is not defined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = DrError> = std::result::Result<T, E>;
