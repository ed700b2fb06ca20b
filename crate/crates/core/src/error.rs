use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input file. `row` is 1-based and counts the header as row 1.
    #[error("load error at row {row}, column '{column}': {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nonstationary or invalid parameters: {0}")]
    InvalidParams(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("grid starvation at t={t}: total probability underflowed to zero; widen the integration limits")]
    GridStarvation { t: usize },

    #[error("oracle size guard violated: {0}")]
    OracleTooLarge(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}
