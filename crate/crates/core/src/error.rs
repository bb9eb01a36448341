use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Malformed on-disk data. Every variant carries the byte offset where
/// parsing stopped.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("bad magic {found:?} at byte {offset}")]
    BadMagic { offset: usize, found: Vec<u8> },
    #[error("unsupported version {found} at byte {offset} (supported: {supported})")]
    UnsupportedVersion {
        offset: usize,
        found: u32,
        supported: u32,
    },
    #[error("unsupported format at byte {offset}: {reason}")]
    Unsupported { offset: usize, reason: String },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("{extra} trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty initialization")]
    EmptyInitialization,
    #[error("empty scene")]
    EmptyScene,
    #[error("non-finite parameter: {field}[{index}]")]
    NonFiniteParameter { field: &'static str, index: usize },
    #[error("non-finite gradient in group {0}")]
    NonFiniteGradient(String),
    #[error("unsupported SH degree {0}")]
    UnsupportedShDegree(u32),
    #[error("stale aux: rendered {aux} gaussians, scene has {scene}")]
    StaleAux { aux: usize, scene: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("insufficient views: need at least 2 cameras, got {0}")]
    InsufficientViews(usize),
    #[error("dataset exhausted at frame {0}")]
    DatasetExhausted(usize),
    #[error("empty mask")]
    EmptyMask,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the optimization itself going non-finite.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteParameter { .. } | Error::NonFiniteGradient(_)
        )
    }
}
