use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("instance too large for exhaustive enumeration: {policies} policies exceeds limit {limit}")]
    SizeLimit { policies: u128, limit: u128 },

    #[error("category {category} has no observations")]
    DegenerateCategory { category: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing transition model for state {state}, action {action}{}", .epoch.map(|t| format!(", epoch {t}")).unwrap_or_default())]
    MissingModel {
        state: usize,
        action: usize,
        epoch: Option<usize>,
    },

    #[error("transition row for augmented state {state}, action {action} has no observations and smoothing is disabled")]
    UnestimableRow { state: usize, action: usize },

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing artifact {}: run `dtr {prerequisite}` first", .path.display())]
    MissingArtifact { path: PathBuf, prerequisite: &'static str },

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
