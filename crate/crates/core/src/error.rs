use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line} (record {id:?}): {message}")]
    Schema {
        line: usize,
        id: String,
        message: String,
    },

    #[error("line {line} (record {id:?}): value out of range: {message}")]
    Range {
        line: usize,
        id: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("record {id:?} is missing required feature `{feature}`")]
    FeatureMissing { id: String, feature: &'static str },

    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from caller-supplied arguments rather than
    /// from the data being processed.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Argument(_))
    }
}
