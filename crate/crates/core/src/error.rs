use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load dataset: {0}")]
    Load(String),

    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown task head `{0}`")]
    UnknownTask(String),

    #[error("model build failed at `{layer}`: {message}")]
    Build { layer: String, message: String },

    #[error("checkpoint integrity failure in {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("label coverage error: {0}")]
    Coverage(String),

    #[error("lexicon error: {0}")]
    Lexicon(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("provider authentication failed: {0}")]
    Auth(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
