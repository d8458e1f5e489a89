use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("observed tokens have zero probability under the model")]
    Contradiction,
    #[error("no updated positions to compare")]
    EmptyComparison,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error: 2 for config problems, 3 for
    /// runtime failures, 4 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) | Error::Config(_) | Error::Parse(_) => 2,
            Error::InvalidModel(_)
            | Error::InvalidArgument(_)
            | Error::Contradiction
            | Error::EmptyComparison => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
