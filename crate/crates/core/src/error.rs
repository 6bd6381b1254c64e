use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the motion-modelling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid dimensions: {0}")]
    InvalidDims(String),
    #[error("field inversion did not converge: residual {residual:.4} mm after {iterations} iterations (tol {tol} mm)")]
    NonConvergence {
        residual: f64,
        tol: f64,
        iterations: usize,
    },
    #[error("registration energy became non-finite at level {level}, iteration {iteration}")]
    NonFiniteEnergy { level: usize, iteration: usize },
    #[error("signal too short: {0} samples (need at least 2)")]
    TooShort(usize),
    #[error("empty input list: {0}")]
    EmptyList(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("perturbed anatomy leaves the grid: {0}")]
    OutOfGrid(String),
    #[error("inconsistent phase count: {0}")]
    InconsistentPhaseCount(String),
    #[error("too few patients: {got} (need at least {need})")]
    TooFewPatients { got: usize, need: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Broad class of the failure, used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::NonConvergence { .. } | Error::NonFiniteEnergy { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Numerical,
    Validation,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
