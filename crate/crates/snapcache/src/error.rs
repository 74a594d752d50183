//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by tensor kernels, attention, compression, and the
/// harness. Every numeric problem (NaN/Inf, undefined softmax) is an
/// explicit error, never a silently propagated value.
#[derive(Debug, Error)]
pub enum SnapError {
    /// Incompatible tensor shapes; the message carries both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration (bad kernel size, capacity, head counts, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A kernel produced or would produce a non-finite or undefined value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Checkpoint bytes did not match the expected layout.
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SnapError>;
