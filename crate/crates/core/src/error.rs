use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. The CLI wraps these in `anyhow`.
#[derive(Debug, Error)]
pub enum Error {
    /// A state, action or parameter fell outside its admissible domain.
    #[error("input out of domain: {0}")]
    InputDomain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes that should chain together do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss, target or prediction became NaN or infinite.
    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

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

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
