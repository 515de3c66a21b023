use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: field `{field}`: {message}")]
    Manifest {
        line: usize,
        field: String,
        message: String,
    },

    #[error("duplicate image_id `{0}`")]
    DuplicateImageId(String),

    #[error("class_id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },

    #[error("malformed annotation xml: {0}")]
    Xml(String),

    #[error("degenerate bounding box ({xmin},{ymin},{xmax},{ymax})")]
    DegenerateBox {
        xmin: i64,
        ymin: i64,
        xmax: i64,
        ymax: i64,
    },

    #[error("unknown class name `{0}`")]
    UnknownClass(String),

    #[error("class {class_id} has {count} record(s); at least 2 are needed to split")]
    ClassTooSmall { class_id: usize, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("backbone `{0}` is not registered")]
    UnregisteredBackbone(String),

    #[error("detector `{0}` is not registered")]
    UnregisteredDetector(String),

    #[error("split `{0}` has no records")]
    EmptySplit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("external detector failed: {0}")]
    Detector(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
