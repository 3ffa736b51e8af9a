use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum LlbError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in input to `{op}`")]
    NonFinite { op: &'static str },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("noise amplitudes are not summable: decay exponent {0} must exceed 1")]
    Summability(f64),

    #[error("resolution: {0}")]
    Resolution(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("blow-up in `{term}` at t = {t}")]
    BlowUp { term: &'static str, t: f64 },

    #[error("non-finite `{term}` term in drift")]
    Diverged { term: &'static str },

    #[error("observer `{name}` failed at step {step}: {reason}")]
    Observer {
        name: String,
        step: u64,
        reason: String,
    },

    #[error("empty: {0}")]
    Empty(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LlbError> = std::result::Result<T, E>;

impl LlbError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LlbError::Io {
            path: path.into(),
            source,
        }
    }
}
