use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] nvtok_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Malformed binary file or byte buffer.
    #[error("{0}")]
    Format(String),

    /// JSON that is well-formed but does not follow the annotation schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Usage(String),

    #[error("handle is closed")]
    Closed,
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit status: 2 usage, 3 validation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    /// Prefixes format and schema errors with the file they came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            Error::Json(e) => Error::Format(format!("{}: {e}", path.display())),
            other => other,
        }
    }
}
