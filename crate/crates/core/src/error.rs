use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("no hyper-parameters for group path {0}")]
    MissingPath(String),

    #[error("invalid hyper-parameters: {0}")]
    InvalidParams(String),

    #[error("storage budget exceeded: {bytes} bytes > {budget} bytes")]
    BudgetExceeded { bytes: u64, budget: u64 },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("non-finite gradient during policy update")]
    NonFiniteGradient,

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Input/validation failures (including missing input files) map to exit code 2, everything else to 1.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::MissingPath(_)
                | Error::InvalidParams(_)
                | Error::Malformed(_)
                | Error::UnknownStrategy { .. }
        ) || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
