use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Se3Error {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },
    #[error("damped normal equations are singular (condition number {condition:e})")]
    SingularSystem { condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("percentile must lie in [0, 100], got {0}")]
    PercentileOutOfRange(f64),
    #[error("need at least {needed} points, cloud has {available}")]
    TooFewPoints { needed: usize, available: usize },
    #[error("{attribute} has {len} entries for {points} points")]
    AttributeLength {
        attribute: &'static str,
        len: usize,
        points: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("source cloud has no covariances")]
    MissingCovariances,
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("no correspondences survived gating")]
    NoCorrespondences,
    #[error("transform drifted {distance:.3} m from its seed (limit {limit} m)")]
    DivergedTransform { distance: f64, limit: f64 },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("local map is empty")]
    EmptyMap,
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: file not found", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}: size {len} bytes is not a multiple of 16", path.display())]
    MalformedScan { path: PathBuf, len: u64 },
    #[error("{}:{line}: {reason}", path.display())]
    MalformedPoseLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}: no `Tr:` calibration line", .0.display())]
    MissingCalibration(PathBuf),
    #[error("unsupported trajectory format `{0}`")]
    UnsupportedFormat(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::FileNotFound(path)
        } else {
            DataError::Io { path, source }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("estimate has {estimate} poses, reference has {reference}")]
    LengthMismatch { estimate: usize, reference: usize },
    #[error("need at least {needed} poses, got {available}")]
    TooFewPoses { needed: usize, available: usize },
    #[error("trajectory translations are collinear or coincident")]
    DegenerateGeometry,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

/// Failure of a whole frame inside the pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("scan {frame} is empty")]
    EmptyScan { frame: usize },
    #[error("frame {frame}: {source}")]
    Cloud {
        frame: usize,
        #[source]
        source: CloudError,
    },
    #[error("frame {frame}: {source}")]
    Map {
        frame: usize,
        #[source]
        source: MapError,
    },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("sequence has no frames")]
    NoFrames,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame {frame}: {source}")]
    Data {
        frame: usize,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("writing output after frame {frame}: {source}")]
    Output {
        frame: usize,
        #[source]
        source: std::io::Error,
    },
}
