use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{primitive}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { primitive: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("segment id {id} out of range for {segments} segments")]
    SegmentOutOfRange { id: usize, segments: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid architecture ({rule}): {detail}")]
    InvalidArch { rule: &'static str, detail: String },

    #[error("differentiate first: architecture still contains {0} mixture links")]
    NotDifferentiated(usize),

    #[error("audit mismatch: {0}")]
    Audit(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("malformed file: {0}")]
    Parse(String),

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {e}", e.line(), e.column()))
    }
}
