use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the estimators, the simulator and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate table: {0}")]
    DegenerateTable(String),

    #[error("invalid margins: {0}")]
    InvalidMargins(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate inputs: {0}")]
    DegenerateInputs(String),

    #[error("missing field `{0}`")]
    MissingField(&'static str),

    #[error("invalid estimates: {0}")]
    InvalidEstimates(String),

    #[error("sample design error: {0}")]
    Design(String),

    #[error("noninterview adjustment cell has no interviewed household: {0}")]
    EmptyCell(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("duplicate listing key {0}")]
    DuplicateKey(String),

    #[error("unresolved follow-up code on record {0}")]
    UnresolvedCode(String),

    #[error("missing weight for unit {0}")]
    MissingWeight(String),

    #[error("{file}: row {row}, column `{column}`: {message}")]
    Schema {
        file: String,
        row: u64,
        column: String,
        message: String,
    },

    #[error("validation failed with {} issue(s)", .0.len())]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("replicate {index} (seed {seed}, stream base {stream}) failed")]
    Replicate {
        index: u64,
        seed: u64,
        stream: u64,
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
