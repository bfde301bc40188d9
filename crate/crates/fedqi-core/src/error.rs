//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural misuse: dimension or architecture mismatches.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs outside an operation's domain (empty shard, b > N, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A byte stream did not match the expected file format.
    #[error("format error: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    /// A byte stream ended before its declared payload.
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// A linear system was rank deficient beyond the pivot tolerance.
    #[error("singular system (condition number {condition:.3e}); request the pseudo-inverse path explicitly to proceed")]
    Singular { condition: f64 },

    /// An aggregate-only consumer attempted to read individual updates.
    #[error("capability error: {0}")]
    Capability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
