//! Crate-wide error type.
//!
//! Client transport errors keep their own type ([`crate::clients::ClientError`])
//! because retriability matters there; everything else funnels into [`Error`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input that failed to parse, with the source position.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Structurally valid input that violates the declared schema.
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    /// An index or turn reference outside the valid range.
    #[error("index error: {0}")]
    Index(String),

    /// A prompt template with a missing or unresolved placeholder.
    #[error("template error: {0}")]
    Template(String),

    /// Extractor output that could not be parsed into mentions or slot values.
    #[error("extraction format error: {message}; raw output: {raw}")]
    ExtractionFormat { message: String, raw: String },

    /// Invalid evaluation input (empty gold set in strict mode, unmatched ids).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Invalid argument to a pure computation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Configuration that failed startup validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("client error: {0}")]
    Client(#[from] crate::clients::ClientError),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
