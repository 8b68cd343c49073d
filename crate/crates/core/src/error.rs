use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate extent")]
    DegenerateExtent,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("requested {k} neighbors but only {available} points are available")]
    TooManyNeighbors { k: usize, available: usize },
    #[error("at least 2 points are required, got {0}")]
    TooFewPoints(usize),
    #[error("model not normalized: support radius {rho} exceeds sqrt(20)")]
    ModelNotNormalized { rho: f64 },
    #[error("exact solver is desk-scale only: {n} points exceeds cap {cap}")]
    ExactCapExceeded { n: usize, cap: usize },
    #[error("factorization failed (condition estimate {condition_estimate:.3e}); eta is likely too small")]
    Factorization { condition_estimate: f64 },
    #[error("empty sphere: no point within radius {radius}")]
    EmptySphere { radius: f64 },
    #[error(
        "active set too large: {estimated} corner samples exceed cap {cap}; try a voxel width of at least {suggested_width:.3e}"
    )]
    ActiveSetTooLarge {
        estimated: usize,
        cap: usize,
        suggested_width: f64,
    },
    #[error("empty sample source")]
    EmptySource,
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
