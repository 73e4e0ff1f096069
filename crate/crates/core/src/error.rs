use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("audio error: {0}")]
    Audio(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out-of-charset characters: {0:?}")]
    OutOfCharset(Vec<char>),
    #[error("symbol {symbol} outside vocabulary of size {vocabulary}")]
    OutOfVocabulary { symbol: usize, vocabulary: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
