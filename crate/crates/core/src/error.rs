use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("relative rotation angle is within 1e-6 of pi; log map is ill-defined")]
    NearPiRotation,

    #[error("camera z-axis is parallel to gravity (|d_z| = {norm:e}); gravity alignment is degenerate")]
    DegenerateGravityAlignment { norm: f64 },

    #[error("fisheye inverse did not converge for radius {radius}")]
    NoConvergence { radius: f64 },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    MismatchedFeatureDims { expected: usize, got: usize },

    #[error("time went backwards: scene at {scene_time}s, step at {step_time}s")]
    NonMonotonicTime { scene_time: f64, step_time: f64 },

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no valid supervision samples fell inside the grid")]
    NoValidSamples,

    #[error("volume must be at least 2 voxels along every axis, got {0:?}")]
    VolumeTooSmall([usize; 3]),

    #[error("could not place {requested} boxes after {attempts} attempts")]
    PlacementFailure { requested: usize, attempts: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path}: {location}: {message}")]
    Parse { path: PathBuf, location: String, message: String },

    #[error("unsupported format version in {path}: found {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: String, expected: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), location: location.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
