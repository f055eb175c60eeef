// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout `langvec`.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model, corpus, steering, evaluation and analysis code.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A file does not follow its declared binary or JSON layout.
    #[error("format error: {0}")]
    Format(String),

    /// A file parsed, but its contents contradict its own header.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A caller passed a value that violates an operation's precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// A sequence or token budget was exceeded.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Text contained a symbol the vocabulary cannot represent.
    #[error("vocabulary error: no symbol matches {snippet:?} at byte {offset}")]
    Vocabulary {
        /// Byte offset of the first unmatched character.
        offset: usize,
        /// A short excerpt starting at `offset`.
        snippet: String,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence {
        /// Zero-based optimizer step.
        step: usize,
        /// The offending loss value.
        loss: f32,
    },

    /// A corpus line failed schema validation.
    #[error("validation error at line {line}: {message}")]
    Validation {
        /// One-based line number in the source file.
        line: usize,
        /// What was wrong.
        message: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// The file being accessed.
        path: PathBuf,
        /// The original error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }
}
