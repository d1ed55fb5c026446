// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("weight container: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("weight container: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("weight container: malformed header: {0}")]
    MalformedHeader(String),

    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` missing from container")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}` in container")]
    UnexpectedTensor(String),

    #[error("tensor `{0}` contains non-finite values")]
    NonFiniteWeight(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds the positional table of {n_ctx}")]
    SequenceTooLong { len: usize, n_ctx: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("word `{0}` encodes to an empty token sequence")]
    EmptyEncoding(String),

    #[error("suite row {row}: {detail}")]
    Schema { row: usize, detail: String },

    #[error("duplicate suite id `{0}`")]
    DuplicateId(String),

    #[error("empty suite")]
    EmptySuite,

    #[error("attribution: {0}")]
    Attribution(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }
}
