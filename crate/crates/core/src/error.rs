use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported image format in {}: {reason}", path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("corrupt image stream in {}: {reason}", path.display())]
    CorruptStream { path: PathBuf, reason: String },

    #[error("no parseable point in response: {0:?}")]
    Parse(String),

    #[error("line {line}: field \"{field}\": {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("policy failure: {0}")]
    Policy(String),

    #[error("endpoint failure: {0}")]
    Endpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
