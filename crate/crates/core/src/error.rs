use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {width}x{height} is too small (each side needs at least 4 pixels)")]
    GridTooSmall { width: usize, height: usize },
    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("raster has {got} values, grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at raster index {index}")]
    NonFinite { index: usize },
    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed PGM header: {0}")]
    PgmHeader(String),
    #[error("truncated PGM payload: expected {expected} samples, found {found}")]
    PgmTruncated { expected: usize, found: usize },
    #[error("unsupported PGM maxval {0} (must be 1..=255)")]
    PgmMaxval(u32),

    #[error("bad flow file magic {0:?}")]
    FlowMagic([u8; 4]),
    #[error("flow file size mismatch: header says {width}x{height}, payload has {payload} bytes")]
    FlowSize {
        width: u32,
        height: u32,
        payload: usize,
    },

    #[error("shape does not fit on a {width}x{height} grid: {what}")]
    OutOfBounds {
        width: usize,
        height: usize,
        what: String,
    },
    #[error("empty support mask")]
    EmptyMask,

    #[error("experiment spec line {line}: {msg}")]
    Spec { line: usize, msg: String },

    #[error("{path}: {source}")]
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
}
