use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("field {field} is empty after normalization")]
    EmptyField { field: usize },

    #[error("bit vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: u32, right: u32 },

    #[error("both vectors are empty")]
    BothEmpty,

    #[error("mixed vector lengths: expected m={expected}, found m={found} for `{profile_id}`")]
    MMismatch {
        expected: u32,
        found: u32,
        profile_id: String,
    },

    #[error("unknown profile `{0}`")]
    UnknownProfile(String),

    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("edge endpoint `{0}` is not in the profile set")]
    UnknownEndpoint(String),

    #[error("invalid distribution: {0}")]
    BadDistribution(String),

    #[error("error pattern infeasible: {0}")]
    PatternInfeasible(String),

    #[error("empty stay set")]
    EmptyStays,

    #[error("length mismatch: {0} predictions vs {1} labels")]
    MisalignedInputs(usize, usize),

    #[error("{file}: missing column `{column}`")]
    Schema { file: String, column: String },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("all profiles have been adjudicated")]
    Exhausted,

    #[error("no served task for anchor `{0}`")]
    UnknownTask(String),

    #[error("invalid ids in decision: {0}")]
    InvalidIds(String),

    #[error("anchor `{0}` already has a different decision")]
    ConflictingDecision(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a bug or the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::File { .. })
    }

    pub(crate) fn parse(file: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            line,
            message: message.into(),
        }
    }
}
