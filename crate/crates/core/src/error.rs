use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or invocation.
    Usage,
    /// Input data is missing or malformed.
    Data,
    /// An internal invariant did not hold.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("annotation out of range: video {video_id} clip [{start}, {stop}] with {num_frames} frames")]
    AnnotationOutOfRange {
        video_id: String,
        start: usize,
        stop: usize,
        num_frames: usize,
    },
    #[error("non-finite embedding in video {video_id} at frame {frame}")]
    NonFiniteEmbedding { video_id: String, frame: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("insufficient matches: {0} correspondences, need at least 4")]
    InsufficientMatches(usize),
    #[error("schema version mismatch in {what}: expected {expected}, found {found}")]
    VersionMismatch {
        what: String,
        expected: u32,
        found: u32,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Invariant(_) => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
