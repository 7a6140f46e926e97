//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum DoteError {
    /// An argument violates a precondition (non-finite data, negative
    /// threshold, empty dataset, values outside the expected range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes do not line up (kernel larger than the image, mismatched
    /// tensor extents, rank outside 2..=3).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numerical self-check failed, e.g. an inverse transform that was
    /// expected to be real carries too much imaginary residue.
    #[error("numerical consistency error: {0}")]
    NumericalConsistency(String),

    /// An operation was called in a state where it is undefined.
    #[error("invalid call: {0}")]
    InvalidCall(String),

    /// A file could not be parsed (bad magic, malformed header,
    /// truncated payload, unknown config key, manifest mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DoteError>;

impl DoteError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DoteError::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        DoteError::Dimension(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        DoteError::Format(msg.into())
    }
}
