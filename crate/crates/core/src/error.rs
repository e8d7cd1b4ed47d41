use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("training data must contain both classes")]
    SingleClass,

    #[error("class `{class}` has {count} examples, need at least {required}")]
    TooFewExamples {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("effectiveness needs at least two clusters to define the nearest neighbour")]
    NeighbourUndefined,

    #[error("pattern `{pattern}` for intent `{intent}` failed to compile: {reason}")]
    Pattern {
        intent: String,
        pattern: String,
        reason: String,
    },

    #[error("moderation service failed: {0}")]
    Moderation(String),

    #[error("store version {0} not found")]
    VersionNotFound(u64),

    #[error("store is empty")]
    EmptyStore,

    #[error("content hash mismatch in {path}: expected {expected}, computed {actual}")]
    Corrupt {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported {what} format version {found}")]
    FormatVersion { what: &'static str, found: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Annotation(#[from] crate::mining::AnnotationError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
