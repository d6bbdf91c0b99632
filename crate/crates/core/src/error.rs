use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::InstanceId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Archive or map file does not follow the on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("frame {index}: {reason}")]
    Frame { index: u64, reason: String },

    #[error("sequence error: {0}")]
    Sequence(String),

    #[error("no observations")]
    NoObservations,

    #[error("unknown instance id {0}")]
    UnknownInstance(InstanceId),

    #[error("no instances")]
    EmptyMap,

    #[error("unparseable query: {0:?}")]
    UnparseableQuery(String),

    #[error("scene spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("scene mismatch: map was built from {map:?}, ground truth belongs to {gt:?}")]
    SceneMismatch { map: String, gt: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn frame(index: u64, reason: impl Into<String>) -> Self {
        Error::Frame {
            index,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
