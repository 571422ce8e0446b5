use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("design matrix is rank deficient at column `{column}`")]
    Singular { column: String },

    #[error("insufficient data: {rows} rows for {params} parameters")]
    InsufficientData { rows: usize, params: usize },

    #[error("regression term `{0}` is not available on the record")]
    MissingTerm(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

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

    /// Broad category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_) | Error::MissingTerm(_) => ErrorKind::Data,
            Error::Format(_) | Error::Parse { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Singular { .. } | Error::InsufficientData { .. } => ErrorKind::Numerical,
            Error::Divergence { .. } => ErrorKind::Divergence,
            Error::Internal(_) => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numerical,
    Divergence,
}
