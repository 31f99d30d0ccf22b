use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (lambda = {lambda:?}, grad norm = {grad_norm})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lambda: Vec<f64>,
        grad_norm: f64,
    },

    #[error("csv: {0}")]
    Csv(#[from] CsvError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Distinct failure modes of CSV ingestion.
#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("file has no header or no data rows")]
    Empty,
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("label column has {0} distinct classes, expected 2")]
    TooManyClasses(usize),
    #[error("label column has a single class {0:?}")]
    SingleClass(String),
    #[error("missing value in row {row}, column {column:?}")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column {column:?}: {value:?} is not a finite number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unknown label {label:?} in row {row}")]
    UnknownLabel { row: usize, label: String },
    #[error("malformed csv: {0}")]
    Malformed(String),
}
