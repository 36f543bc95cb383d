//! Crate-wide error type.
//!
//! Errors are grouped by how the CLI reports them: configuration problems
//! exit with code 2, missing prerequisites with 3, everything else with 4.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PLY: {0}")]
    PlyFormat(String),

    #[error("label out of range: class {value} but schema has {num_classes} classes")]
    LabelOutOfRange { value: u32, num_classes: usize },

    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },

    #[error("invalid label schema: {0}")]
    InvalidSchema(String),

    #[error("rotation axis is not a unit vector (norm {norm})")]
    NonUnitAxis { norm: f64 },

    #[error("subsample target {target} exceeds point count {available}")]
    SubsampleTooLarge { target: usize, available: usize },

    #[error("operation requires a non-empty point cloud")]
    EmptyCloud,

    #[error("length mismatch: {left} vs {right} ({what})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid track spec: {0}")]
    InvalidTrackSpec(String),

    #[error("invalid noise spec: {0}")]
    InvalidNoiseSpec(String),

    #[error("batch item {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no meshes to sample")]
    EmptyMeshList,

    #[error("mesh surface has zero total area")]
    ZeroAreaSurface,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("cloud has {n} points, below density level minimum {lo}")]
    BelowDensityLevel { n: usize, lo: usize },

    #[error("invalid network config: {0}")]
    InvalidNetConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code contract: 0 success, 2 config error,
    /// 3 missing prerequisite, 4 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidTrackSpec(_)
            | Error::InvalidNoiseSpec(_)
            | Error::InvalidSchema(_) => 2,
            Error::MissingPrerequisite(_) => 3,
            Error::BatchItem { source, .. } => source.exit_code(),
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
