use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate coefficients: all branch weights are zero")]
    DegenerateCoefficients,
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("search space too large for enumeration: {size} genomes (limit {limit})")]
    SpaceTooLarge { size: f64, limit: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
