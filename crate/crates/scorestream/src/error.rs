//! Error type shared across the pipeline, with the process exit-code
//! mapping used by the CLI: 1 usage/config, 2 runtime, 3 data integrity.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{context} ({path}): {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O failure at byte offset {offset} of {path}: {source}")]
    CorpusIo {
        path: PathBuf,
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("data integrity error: {0}")]
    Integrity(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    pub fn io(context: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            context,
            path: path.into(),
            source,
        }
    }

    /// CLI exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) => 1,
            Error::Integrity(_) => 3,
            Error::Io { .. } | Error::CorpusIo { .. } | Error::Runtime(_) => 2,
        }
    }
}
