//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by the training laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector with zero (or non-finite) norm was fed to a cosine-space
    /// operation that cannot define a direction for it.
    #[error("degenerate input: {context}")]
    DegenerateInput { context: String },

    /// An operation received an empty collection it cannot work with.
    #[error("empty input: {context}")]
    EmptyInput { context: String },

    /// Mismatched vector dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An index referred outside its collection.
    #[error("{what} out of range: {index} >= {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A text file (dataset dump, config, manifest) failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn degenerate(context: impl Into<String>) -> Self {
        Error::DegenerateInput {
            context: context.into(),
        }
    }

    pub(crate) fn empty(context: impl Into<String>) -> Self {
        Error::EmptyInput {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
