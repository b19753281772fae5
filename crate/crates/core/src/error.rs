use std::path::PathBuf;

/// Errors produced by the calibration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point projects with a depth too close to zero.
    #[error("singular projection: camera depth {0:e}")]
    SingularProjection(f64),

    /// Required input is empty.
    #[error("empty input: {0}")]
    Empty(String),

    /// A file does not follow its format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A text file could not be parsed.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An optimizer produced a non-finite loss.
    #[error("optimization diverged: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
