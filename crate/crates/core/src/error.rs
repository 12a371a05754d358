use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate point cloud: rank {rank} < 3")]
    Degenerate { rank: usize },

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("invalid episode state: {0}")]
    State(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{record}: {msg}")]
    Parse {
        path: PathBuf,
        record: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, record: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            record,
            msg: msg.into(),
        }
    }
}
