use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid word: {0}")]
    InvalidWord(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("word of {len} symbols exceeds the maximum length {max}")]
    WordTooLong { len: usize, max: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unsupported {what} format version: expected {expected}, found {found}")]
    Version {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("word is not coverable by the vocabulary: no subword starts at symbol position {position}")]
    Uncoverable { position: usize },

    #[error("unknown triplet ({r},{g},{b}) at position {position}")]
    UnknownTriplet {
        position: usize,
        r: u16,
        g: u16,
        b: u16,
    },

    #[error("vocabulary construction failed: {0}")]
    Vocabulary(String),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for I/O and usage problems, false for domain failures
    /// (coverage, divergence, unknown triplets).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::InvalidArgument(_)
                | Error::Format { .. }
                | Error::Version { .. }
        )
    }
}
