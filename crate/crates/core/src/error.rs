// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

use crate::model::AlterationType;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("dangling original_id {0:?}")]
    DanglingOriginal(String),

    #[error("no viable site for {atype}: {reason}")]
    NoViableSite {
        atype: AlterationType,
        reason: String,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("unsupported question: {0}")]
    UnsupportedQuestion(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("missing predictions for {} instance(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("sequence lengths differ ({original} vs {altered}) in strict alignment mode")]
    LengthMismatch { original: usize, altered: usize },

    #[error("layer set for {0} is empty")]
    EmptyLayerSet(&'static str),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("transport: {0}")]
    Transport(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
