use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition (bad shape, out-of-range value).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration record is inconsistent or refers to something that does not exist.
    #[error("configuration error: {0}")]
    Config(String),

    /// A noise schedule cannot support the requested computation.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A numerical routine failed (non-PSD covariance, non-finite intermediate).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Loading a clip failed; carries the clip id so callers can report it.
    #[error("clip {clip}: {source}")]
    Clip {
        clip: String,
        #[source]
        source: Box<Error>,
    },

    /// Inference failed on one frame of a clip.
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
