use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupted data: {0}")]
    Corruption(String),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("training diverged: non-finite gradient in layer `{layer}`")]
    Divergence { layer: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("calibration error: {0}")]
    Calib(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("observation angles are undefined at the sensor origin")]
    UndefinedAngle,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
