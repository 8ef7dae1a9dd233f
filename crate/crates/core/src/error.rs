use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("requested k={k} neighbours from a set of {available}")]
    KTooLarge { k: usize, available: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("point data carries no normals")]
    MissingNormals,

    #[error("point data carries no colors")]
    MissingColors,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid skinning weights at row {row}: {reason}")]
    InvalidWeights { row: usize, reason: String },

    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("point sets differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("regularization needs registered template vertices with reference weights")]
    MissingRegistration,

    #[error("vertex {0} has no part label")]
    UnlabeledVertex(usize),

    #[error("invalid part label {0}")]
    InvalidLabel(u32),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("iso-level {iso} lies outside the grid range [{min}, {max}]")]
    EmptySurface { iso: f64, min: f64, max: f64 },

    #[error("donor has no points labeled {0}")]
    EmptyPart(String),

    #[error("mesh is not closed")]
    OpenMesh,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
