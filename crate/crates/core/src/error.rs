use std::path::PathBuf;

use thiserror::Error;

use crate::mask::{Dims, Rotation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: expected 8-bit single-channel image, found {found}")]
    UnsupportedBitDepth { path: PathBuf, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: Dims, found: Dims },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDims { width: usize, height: usize },

    #[error("raster buffer holds {len} values, expected {expected}")]
    BufferLength { len: usize, expected: usize },

    #[error("rotation {0} supplied more than once")]
    DuplicateRotation(Rotation),

    #[error("multi-angle union takes rotations of 90, 180 or 270 degrees only")]
    IdentityRotation,

    #[error("cannot align a {dims} prediction rotated by {rotation}: mask is not square")]
    NonSquareRotation { dims: Dims, rotation: Rotation },

    #[error("missing prediction: {0}")]
    MissingPrediction(String),

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("expected exactly 3 per-class values, got {0}")]
    WrongArity(usize),

    #[error("image id sets differ (only in first: {only_left:?}; only in second: {only_right:?})")]
    IdMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("duplicate image id: {0}")]
    DuplicateId(String),

    #[error("duplicate output id: {0}")]
    DuplicateOutputId(String),

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("inconsistent condition vector: {0}")]
    InconsistentConditionVector(String),

    #[error("invalid threshold configuration: {0}")]
    InvalidThresholds(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by the filesystem or undecodable files, as
    /// opposed to inputs that are well-formed but inconsistent.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::Decode { .. }
                | Error::UnsupportedBitDepth { .. }
                | Error::Io { .. }
        )
    }
}
