use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("inconsistent row width: row {row} has {found} fields, header has {expected}")]
    InconsistentRowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid class label `{0}`: labels must be non-negative integers")]
    InvalidLabel(String),

    #[error("column `{0}` has no non-missing values")]
    AllMissing(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class {0} is absent from the training data")]
    AbsentClass(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("locally constant reject behavior: neighborhood labels are single-class after {retries} retries")]
    LocallyConstant { retries: usize },

    #[error("target class unreachable: the tree has no leaf predicting class {0}")]
    TargetUnreachable(usize),

    #[error("sample is not rejected: reject score {score} >= threshold {threshold}")]
    NotRejected { score: f64, threshold: f64 },

    #[error("unsupported model document version {0}")]
    UnsupportedVersion(u32),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
