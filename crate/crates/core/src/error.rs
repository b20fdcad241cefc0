use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("stream order violated at line {line}: timestamp {timestamp_ms} ms precedes {previous_ms} ms")]
    StreamOrder {
        line: usize,
        timestamp_ms: i64,
        previous_ms: i64,
    },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("layout fingerprint mismatch: model {model:016x}, input {input:016x}")]
    Fingerprint { model: u64, input: u64 },

    #[error("non-finite value at feature index {0}")]
    NonFinite(usize),

    #[error("training data: {0}")]
    Training(String),

    #[error("class `{class}` has {count} instances, fewer than the {folds} folds requested")]
    Stratification { class: String, count: usize, folds: usize },

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unknown activity `{0}`")]
    UnknownActivity(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
