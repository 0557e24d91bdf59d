use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("frame {file}: {reason}")]
    Frames { file: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unresolved: {0}")]
    Unresolved(String),

    #[error(transparent)]
    Client(#[from] crate::client::ClientError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Self::Dimension(msg.into())
    }

    /// Prefixes a format error with the file it came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            Self::Format(m) => Self::Format(format!("{}: {m}", path.display())),
            other => other,
        }
    }

    /// Short machine-readable category, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Frames { .. } => "frames",
            Self::Format(_) => "format",
            Self::Invalid(_) => "invalid_input",
            Self::Dimension(_) => "dimension_mismatch",
            Self::Unresolved(_) => "unresolved",
            Self::Client(_) => "client",
        }
    }
}
