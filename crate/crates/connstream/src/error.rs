use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] connstream_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("cannot listen on port {port}: {source}")]
    Bind { port: u16, source: io::Error },

    #[error("{0}")]
    Environment(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for unreadable or malformed input, 3 for inputs
    /// that parse but cannot be processed, 4 for the environment.
    pub fn exit_code(&self) -> i32 {
        use connstream_core::Error as C;
        match self {
            Error::Format { .. } | Error::Config(_) | Error::Core(C::Config(_)) => 2,
            Error::Io { source, .. } => match source.kind() {
                io::ErrorKind::NotFound | io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => 2,
                _ => 4,
            },
            Error::Core(_) | Error::Pipeline(_) | Error::Protocol(_) => 3,
            Error::Bind { .. } | Error::Environment(_) => 4,
        }
    }
}
