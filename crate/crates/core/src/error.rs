use std::path::PathBuf;

use crate::metrics::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mask dimensions differ: {expected_width}x{expected_height} vs {found_width}x{found_height}")]
    DimensionMismatch {
        expected_width: u32,
        expected_height: u32,
        found_width: u32,
        found_height: u32,
    },

    #[error("invalid RLE: {0}")]
    InvalidRle(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("evaluation input rejected: {0}")]
    Validation(ValidationReport),

    #[error("instance id {0} is not present in the annotations")]
    UnknownInstance(u64),

    #[error("record task mode {found} cannot be used for {requested}")]
    ModeMismatch { requested: String, found: String },

    #[error("a task template is already present in the first person turn")]
    TemplateAlreadyPresent,

    #[error("record has no person turn")]
    NoPersonTurn,

    #[error("image {0} has no annotations")]
    NoAnnotations(u64),

    #[error("COCO dataset {path} is inconsistent: {message}")]
    Coco { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model client failed: {0}")]
    Client(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem or network rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
