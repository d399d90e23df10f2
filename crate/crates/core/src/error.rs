use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: String },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected EOF at {0} section")]
    UnexpectedEof(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("non-finite loss on object {object} at epoch {epoch}")]
    NonFiniteLoss { object: usize, epoch: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
