//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Text-format parse failure, with the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Binary file format violation (magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Shape or dimension mismatch between paired structures.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Precondition or argument violation.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Integer overflow in exact walk-count arithmetic.
    #[error("overflow: {0}")]
    Overflow(String),

    /// A numeric value left the finite range.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training loss diverged; reports where.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
