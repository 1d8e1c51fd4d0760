use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("no votes")]
    NoVotes,

    #[error("no samples")]
    NoSamples,

    #[error("enumeration too large: N={rollouts} (max {max_rollouts}), K={options} (max {max_options})")]
    EnumerationTooLarge {
        rollouts: usize,
        options: usize,
        max_rollouts: usize,
        max_options: usize,
    },

    #[error("option index {index} out of range for K={options}")]
    OptionOutOfRange { index: usize, options: usize },

    #[error("{field} out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },

    #[error("hypotheses violated: {0}")]
    HypothesesViolated(String),

    #[error("unknown tier {0}")]
    UnknownTier(f64),

    #[error("group too small: {0} (need at least 2)")]
    GroupTooSmall(usize),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("schedule tier {0} not present in question set")]
    MissingTier(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn out_of_range(field: &'static str, reason: impl Into<String>) -> LabError {
    LabError::OutOfRange {
        field,
        reason: reason.into(),
    }
}

pub(crate) fn io_error(path: &std::path::Path, err: impl std::fmt::Display) -> LabError {
    LabError::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}
