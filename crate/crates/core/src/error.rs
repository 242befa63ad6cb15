use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Cholesky pivot fell at or below the floor. Callers are expected to
    /// add ridge regularization and retry.
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("eigen solver did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid label {label} (expected 0..{classes})")]
    InvalidLabel { label: i64, classes: usize },

    #[error("mixture component {component} lost all responsibility mass")]
    EmptyComponent { component: usize },

    #[error("too few points: {points} points for {k} clusters")]
    TooFewPoints { points: usize, k: usize },

    #[error("no positive pairs: every cluster is a singleton")]
    NoPositivePairs,

    #[error("no negative pairs: every point shares one cluster (k too small)")]
    NoNegativePairs,

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse failure at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines (as opposed to bad input
    /// or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonConvergence { .. }
                | Error::EmptyComponent { .. }
        )
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
