use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "no quiescence after {horizon} steps ({messages} messages sent); aborting as livelock"
    )]
    Livelock { horizon: u64, messages: u64 },

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) => 2,
            Error::Livelock { .. } => 3,
            Error::Invariant(_) => 4,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}
