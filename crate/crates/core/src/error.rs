use std::io;

use thiserror::Error;

/// Failures while decoding a record or checkpoint file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid field value: {0}")]
    InvalidValue(String),
    #[error("invalid metadata: {0}")]
    InvalidMeta(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// A scoring component produced NaN or infinity.
    #[error("non-finite {component} output")]
    NonFinite { component: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
