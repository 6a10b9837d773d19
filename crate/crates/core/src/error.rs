use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{0}` declared in the schema is absent from the input")]
    MissingColumn(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{column}` has kind {found}, expected {expected}")]
    ColumnKind {
        column: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("table is empty")]
    EmptyTable,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance in `{0}`")]
    ZeroVariance(String),

    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("no station reports variable `{0}`")]
    NoStation(String),

    #[error("date {0} precedes the exposure epoch")]
    BeforeEpoch(chrono::NaiveDate),

    #[error("all days in the week are missing")]
    AllMissing,

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric undefined on {failed} of {attempts} bootstrap resamples")]
    MetricUndefined { failed: usize, attempts: usize },

    #[error("patient `{0}` has recorded relapses")]
    HasRelapses(String),

    #[error("invalid synthetic spec, `{field}`: {message}")]
    Spec { field: String, message: String },

    #[error("config error: {0}")]
    Config(String),

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

    pub fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn cell(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Cell {
            row,
            column: column.into(),
            message: message.into(),
        }
    }
}
