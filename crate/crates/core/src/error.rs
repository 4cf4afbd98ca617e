use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("newick parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate sample in row {row} ({label}): {reason}")]
    DegenerateSample {
        row: usize,
        label: String,
        reason: String,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("tree assumption violated: {0}")]
    Assumption(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by bad input rather than a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical { .. } | Error::Io(_))
    }
}
