//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A row or element that does not conform to the record schema.
    #[error("line {line}: field `{field}`: {message}")]
    MalformedRow {
        line: u64,
        field: &'static str,
        message: String,
    },

    #[error("no records")]
    NoRecords,

    #[error("unknown split `{0}` (expected `train`, `validation` or `test`)")]
    UnknownSplit(String),

    #[error("unknown vote strategy `{0}` (expected `max` or `mean`)")]
    UnknownStrategy(String),

    #[error("unknown level `{0}` (expected `image` or `subject`)")]
    UnknownLevel(String),

    #[error("unknown metric `{0}` (expected `auc`, `sensitivity`, `specificity`, `accuracy` or `f1`)")]
    UnknownMetric(String),

    #[error("unknown threshold mode `{0}` (expected `ge` or `gt`)")]
    UnknownThresholdMode(String),

    #[error("no scores for subject")]
    NoScores,

    #[error("empty input")]
    EmptyInput,

    /// A metric that cannot be evaluated on the given counts, e.g. sensitivity
    /// when no positive-class records are present.
    #[error("undefined metric `{metric}`: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("dataset has no validation split")]
    MissingValidationSplit,

    #[error("subject-level operation requires a vote strategy")]
    MissingStrategy,

    #[error("no calibration artifact loaded for level `{level}` strategy `{strategy}`")]
    MissingArtifact { level: String, strategy: String },

    #[error("all {0} bootstrap replicates were excluded (metric undefined on every resample)")]
    AllReplicatesExcluded(u32),

    #[error("oracle inapplicable: {0}")]
    OracleInapplicable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
