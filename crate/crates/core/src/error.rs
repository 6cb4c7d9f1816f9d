use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a single ingested row was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowIssue {
    NonFiniteUncertainty,
    NonBinaryError,
    InconsistentModelCount { expected: usize, found: usize },
    NoModels,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::NonFiniteUncertainty => f.write_str("non-finite uncertainty"),
            RowIssue::NonBinaryError => f.write_str("error label not binary"),
            RowIssue::InconsistentModelCount { expected, found } => {
                write!(f, "expected {expected} models, found {found}")
            }
            RowIssue::NoModels => f.write_str("record carries no model scores"),
        }
    }
}

/// A rejected row. `row` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub issue: RowIssue,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.issue)
    }
}

/// A problem located at a line of an input file. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid records: {}", join(.0))]
    InvalidRecords(Vec<RowError>),

    #[error("malformed dataset: {}", join(.0))]
    MalformedDataset(Vec<LineError>),

    #[error("missing column(s): {0}")]
    MissingColumns(String),

    #[error("{name} must lie in (0, 1), got {value}")]
    OutOfUnitInterval { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected} values, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("upper confidence bound is undefined on an empty selection")]
    EmptySelection,

    #[error("exact search supports at most {cap} models, got {models}; use coordinate ascent")]
    ExactSearchTooLarge { models: usize, cap: usize },

    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("threshold selects zero probability mass under the generative spec")]
    ZeroSelectionMass,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable short identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidRecords(_) => "invalid_records",
            Error::MalformedDataset(_) => "malformed_dataset",
            Error::MissingColumns(_) => "missing_columns",
            Error::OutOfUnitInterval { .. } => "out_of_range",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptySelection => "empty_selection",
            Error::ExactSearchTooLarge { .. } => "exact_search_too_large",
            Error::TooFewRecords(_) => "too_few_records",
            Error::UnknownMethod(_) => "unknown_method",
            Error::ZeroSelectionMass => "zero_selection_mass",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Json { .. } => "json",
        }
    }
}
