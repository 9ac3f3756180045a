use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
