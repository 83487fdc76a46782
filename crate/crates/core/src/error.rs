use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix decomposition failed: {0}")]
    Decomposition(String),

    #[error("inconsistent sampler state: {0}")]
    State(String),

    #[error("no information: {0}")]
    NoInformation(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite {
        iteration: usize,
        what: String,
        /// Parameter trajectory up to and including the failing iteration.
        trajectory: Vec<Vec<f64>>,
    },

    #[error("importance sampling failed for subject {subject}: no finite weights")]
    ZeroEffectiveSample { subject: String },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
