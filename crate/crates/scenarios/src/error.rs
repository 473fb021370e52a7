use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] flownet_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("plot {path}: {message}")]
    Plot { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for numerical failures, 1 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_solver_failure() => 3,
            Error::Core(_) | Error::Csv { .. } => 2,
            Error::Io { .. } | Error::Plot { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
