use std::path::PathBuf;

/// Failure classes for checkpoint files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointErrorKind {
    BadMagic,
    VersionMismatch,
    DigestMismatch,
    Truncation,
    Corrupt,
}

impl std::fmt::Display for CheckpointErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::BadMagic => "corrupt magic",
            Self::VersionMismatch => "version mismatch",
            Self::DigestMismatch => "digest mismatch",
            Self::Truncation => "truncation",
            Self::Corrupt => "corrupt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint error ({kind}) on {path}: {detail}")]
    Checkpoint {
        kind: CheckpointErrorKind,
        path: PathBuf,
        detail: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// The checkpoint failure class, if this is a checkpoint error.
    pub fn checkpoint_kind(&self) -> Option<CheckpointErrorKind> {
        match self {
            Error::Checkpoint { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
