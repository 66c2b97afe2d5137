use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {}: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported dtype {found:?} (expected {expected:?})")]
    UnsupportedDtype { expected: &'static str, found: String },

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("mask sample {value} at index {index} is not 0 or 1")]
    NonBinaryMask { index: usize, value: u8 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid spacing: {0:?} (components must be finite and > 0)")]
    InvalidSpacing([f64; 3]),

    #[error("invalid window: width {0} must be > 0")]
    InvalidWindow(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid slice range {start}:{end} for {nz} slices")]
    InvalidRange { start: usize, end: usize, nz: usize },

    #[error("seed ({x}, {y}, {z}) outside volume bounds {dims:?}")]
    SeedOutOfBounds {
        x: usize,
        y: usize,
        z: usize,
        dims: [usize; 3],
    },

    #[error("invalid phantom geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    Undefined(String),
}
