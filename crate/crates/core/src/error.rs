use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the extraction pipeline.
///
/// The variants are grouped into the categories the command-line front end
/// maps onto exit codes (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("validation error for document {doc_id:?}, field {field:?}: {message}")]
    Validation {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("BIO encoding conflict: {0}")]
    EncodingConflict(String),

    #[error("input of length {len} exceeds encoder capacity {max}")]
    InputTooLong { len: usize, max: usize },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownToken { id: usize, vocab_size: usize },

    #[error("encoder failed on window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "non-finite loss at batch {batch}: total={total}, span={span}, ner={ner}"
    )]
    NonFiniteLoss {
        batch: usize,
        total: f64,
        span: f64,
        ner: f64,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error category, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::SchemaMismatch(_) => ErrorCategory::Config,
            Error::Format { .. }
            | Error::Validation { .. }
            | Error::EncodingConflict(_)
            | Error::UnknownToken { .. } => ErrorCategory::Data,
            Error::Io { .. } => ErrorCategory::Config,
            _ => ErrorCategory::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(
        doc_id: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            doc_id: doc_id.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
