use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: [usize; 3],
        found: [usize; 3],
    },

    #[error("empty mask")]
    EmptyMask,

    #[error("sphere lies entirely outside the grid")]
    SphereOutsideGrid,

    #[error("sphere too small after erosion")]
    SphereTooSmall,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infinite SNR: background ROI has zero standard deviation")]
    InfiniteSnr,

    #[error("Gaussian fit did not converge (last residual rms {residual_rms})")]
    FitNonConvergence { residual_rms: f64 },

    #[error("no interior gradient peak on edge profile")]
    NoEdgePeak,

    #[error("overlapping spheres {0} and {1}")]
    OverlappingSpheres(usize, usize),

    #[error("expected count {0} exceeds the Poisson sampler range")]
    CountOverflow(f64),

    #[error("background ROI clearance of {required_mm} mm cannot be met (closest sphere gap {found_mm:.2} mm)")]
    ClearanceUnsatisfiable { required_mm: f64, found_mm: f64 },

    #[error("bad magic in volume header {path}: {found:?}")]
    BadMagic { path: PathBuf, found: String },

    #[error("payload length mismatch for {path}: header implies {expected} bytes, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value in payload {path} at index {index}")]
    NonFinitePayload { path: PathBuf, index: usize },

    #[error("malformed volume header {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
