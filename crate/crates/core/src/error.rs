use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector cannot be scored")]
    ZeroVector,

    #[error("cannot aggregate an empty score list")]
    EmptyScores,

    #[error("document {0:?} has no stored blocks")]
    NoBlocks(String),

    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),

    #[error("invalid document id {0:?}")]
    InvalidDocId(String),

    #[error("bad store magic: {0:?}")]
    BadMagic([u8; 8]),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(String),

    #[error("invalid response from embedding service: {0}")]
    InvalidResponse(String),

    #[error("malformed line {line} in {path}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("document {0:?} not found")]
    MissingDocument(String),

    #[error("invalid triplet: {0}")]
    InvalidTriplet(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid config at `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
