use std::path::Path;

/// Error type shared across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad quantization level, empty area set,
    /// out-of-range knobs, malformed config files.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or inconsistent input data (records, fixtures, schemas).
    #[error("data error: {0}")]
    Data(String),
    /// Training produced a non-finite loss.
    #[error("numeric divergence: non-finite training loss at epoch {epoch}")]
    Divergence { epoch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Error::Data(format!("{}: {err}", path.display()))
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Divergence { .. } => 4,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Data(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Data(err.to_string())
    }
}
