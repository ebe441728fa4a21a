use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("batch {} ({id}): expected {expected} columns, found {found}{}", .batch + 1, row_suffix(*.row))]
    DimensionMismatch {
        batch: usize,
        id: String,
        row: Option<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value {value} at batch {}, row {}, column {}", .batch + 1, .row + 1, .col + 1)]
    NonFinite {
        batch: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("batch {} ({id}) has no rows", .batch + 1)]
    EmptyBatch { batch: usize, id: String },

    #[error("duplicate batch id {id:?} at batch {}", .batch + 1)]
    DuplicateBatchId { batch: usize, id: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "cluster {} is degenerate: {size} cells assigned, at least {required} required{}",
        .cluster + 1,
        iteration_suffix(*.iteration)
    )]
    DegenerateCluster {
        cluster: usize,
        size: usize,
        required: usize,
        iteration: Option<usize>,
    },

    #[error("covariance of cluster {} is not positive definite", .cluster + 1)]
    NotPositiveDefinite { cluster: usize },

    #[error("no real KKT solution: {0}")]
    NoKktSolution(String),

    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: Option<usize>) -> String {
    row.map(|r| format!(" at row {}", r + 1)).unwrap_or_default()
}

fn iteration_suffix(iteration: Option<usize>) -> String {
    iteration
        .map(|t| format!(" (EM iteration {t})"))
        .unwrap_or_default()
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DegenerateCluster { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NoKktSolution(_)
            | Error::UndefinedMetric { .. } => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) if e.is_io_error() => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
