use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown function id f{0} (expected 1..=8)")]
    UnknownFunction(u8),

    #[error("function f{fn_id} reads x9 but only {p} covariates are available")]
    TooFewCovariates { fn_id: u8, p: usize },

    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no treated observations")]
    NoTreated,

    #[error("empty grid")]
    EmptyGrid,

    /// Carries the parameters at the end of the last finite epoch.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::model::TwinParams>,
    },

    #[error("all {} grid cells diverged: {}", .0.len(), .0.join("; "))]
    AllCellsDiverged(Vec<String>),

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnknownFunction(_) => "unknown_function",
            Error::TooFewCovariates { .. } => "too_few_covariates",
            Error::Csv { .. } => "csv",
            Error::EmptyBatch => "empty_batch",
            Error::NoTreated => "no_treated",
            Error::EmptyGrid => "empty_grid",
            Error::Diverged { .. } => "diverged",
            Error::AllCellsDiverged(_) => "all_cells_diverged",
            Error::Run { .. } => "run",
            Error::ModelFormat(_) => "model_format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
