use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rule number {0} is outside 0..=255")]
    RuleNumberOutOfRange(i64),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimisation diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("volume {index} ({name}) has {what} {found:?} on axis {axis}, expected {expected:?}")]
    Misaligned {
        index: usize,
        name: String,
        what: &'static str,
        axis: char,
        expected: f64,
        found: f64,
    },

    #[error("payload {path}: expected {expected} bytes, found {actual}")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("case {case_id}: {source}")]
    Case {
        case_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("lesion packing failed after {attempts} attempts")]
    InfeasiblePacking { attempts: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_case(self, case_id: &str) -> Self {
        Error::Case {
            case_id: case_id.to_string(),
            source: Box::new(self),
        }
    }
}
