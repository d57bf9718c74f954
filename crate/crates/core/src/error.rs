use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("xml: {0}")]
    Xml(String),

    /// A required MusicXML element was absent or unreadable.
    #[error("musicxml: missing or invalid <{element}> (line {line})")]
    MissingElement { element: &'static str, line: u32 },

    #[error("schema: field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("encoding: {0}")]
    Encoding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
