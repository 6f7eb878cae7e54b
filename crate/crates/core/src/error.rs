use std::path::PathBuf;

use crate::dataset::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {0} has (near) zero norm")]
    ZeroVector(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid embedding table: {0}")]
    InvalidTable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("item `{0}` not found in ranked list")]
    ItemNotFound(String),

    #[error("no query qualifies for the requested selection")]
    EmptySelection,

    #[error("relative delta is undefined when both metrics are zero")]
    DegenerateDenominator,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("caption `{0}` lacks a real or generated counterpart")]
    MissingCounterpart(String),

    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("need at least {needed} vectors, got {actual}")]
    TooFewVectors { needed: usize, actual: usize },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: file length {actual} does not match header (expected {expected})")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset failed validation with {} issue(s)", .0.issues.len())]
    ValidationFailed(ValidationReport),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::DimMismatch { expected, actual }
    }
}
