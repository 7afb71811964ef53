use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("event (trial {trial_id}, repetition {repetition_idx}, stimulus {stimulus_id}) at {onset_s} s falls outside the recording")]
    EventOutOfBounds {
        trial_id: usize,
        repetition_idx: usize,
        stimulus_id: usize,
        onset_s: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("missing class: {0}")]
    MissingClass(String),

    #[error("trial {trial_id} is missing repetition {repetition_idx} of stimulus {stimulus_id}")]
    MissingCell {
        trial_id: usize,
        repetition_idx: usize,
        stimulus_id: usize,
    },

    #[error("train and test share trial ids: {0:?}")]
    TrialOverlap(Vec<usize>),

    #[error("malformed data: {0}")]
    Format(String),

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

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration and argument problems, as opposed to problems with the data itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigParse { .. } | Error::InvalidArgument(_)
        )
    }
}
