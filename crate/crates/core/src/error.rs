use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: ingestion failed on `{field}`: {message}")]
    Ingestion {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("feature {index}: {message}")]
    Schema { index: usize, message: String },

    #[error("raster grids are not aligned: {0}")]
    Alignment(String),

    #[error("pixel at ({x}, {y}) is claimed by several blocks: {}", block_ids.join(", "))]
    Ambiguity {
        x: f64,
        y: f64,
        block_ids: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("selection `{0}` matched no rows")]
    EmptySelection(String),

    #[error("cannot balance classes: {0}")]
    Balance(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("cross-validation fold {fold} is degenerate: {message}")]
    Fold { fold: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver did not converge after {iterations} iterations (max violation {violation:.3e})")]
    Convergence {
        iterations: usize,
        violation: f64,
        /// Best-so-far dual variables, when the solver has any.
        duals: Vec<f64>,
    },

    #[error("operation not supported: {0}")]
    Capability(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Capability(_) => ErrorKind::Config,
            Error::Convergence { .. } => ErrorKind::Convergence,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
