use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("player index {index} out of range for a game with {n} players")]
    IndexOutOfRange { index: i64, n: usize },

    #[error("{n} players exceeds the limit of {limit} for this method")]
    TooManyPlayers { n: usize, limit: usize },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate transaction id {0:?}")]
    DuplicateId(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("storage failure: {0}")]
    Storage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Storage(e.to_string())
    }
}
