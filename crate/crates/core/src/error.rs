use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the surrogate pipeline.
///
/// Each variant maps onto one of the CLI's exit categories through
/// [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate KLE mode {mode}: eigenvalue {eigenvalue:e}")]
    DegenerateMode { mode: usize, eigenvalue: f64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("pairing mismatch: {0}")]
    Pairing(String),

    #[error("solver became unstable at step {step} (|phi| = {magnitude:e})")]
    Instability { step: usize, magnitude: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::IncompatibleGrids(_)
            | Error::InsufficientData(_)
            | Error::Pairing(_)
            | Error::Data { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::ModelEvaluation(_) => ErrorCategory::Data,
            Error::DegenerateMode { .. }
            | Error::OutOfDomain(_)
            | Error::Instability { .. }
            | Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
