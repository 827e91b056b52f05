use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("length mismatch: header declares {expected} bytes of payload, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid label {label} at record {record}")]
    InvalidLabel { record: usize, label: u8 },

    #[error("cluster {cluster} has {available} samples, {required} required")]
    Capacity {
        cluster: usize,
        available: usize,
        required: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("training diverged at batch {batch}: loss is {loss}")]
    Divergence { batch: usize, loss: f64 },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by the input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::LengthMismatch { .. }
            | Error::InvalidLabel { .. }
            | Error::Capacity { .. }
            | Error::Divergence { .. } => true,
            Error::Round { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
