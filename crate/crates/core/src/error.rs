use std::path::PathBuf;

/// Errors shared by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Rejected input data (wrong point count, degenerate geometry, empty sets, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Failure while reading or writing a file.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content, with 1-based line number where applicable.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Model/network file problems: bad magic, unsupported version, corrupt payload.
    #[error("model file error: {0}")]
    Model(String),

    /// Training could not proceed (unbalanceable bootstrap, divergent loss, ...).
    #[error("training failed: {0}")]
    Train(String),

    /// Artifacts that cannot be used together (scheme or label mismatch).
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
