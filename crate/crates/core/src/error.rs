use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad count: requested {requested}, available {available}")]
    BadCount { requested: usize, available: usize },
    #[error("empty point cloud")]
    Empty,
    #[error("feature rows ({feats}) do not match point count ({points})")]
    FeatureRows { points: usize, feats: usize },
    #[error("reference vector has no component in the sorting plane")]
    DegenerateRef,
    #[error("vector {0} is not unit length")]
    NotUnit(&'static str),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("tape node {node} refers to a later node {input}")]
    GraphCycle { node: usize, input: usize },
    #[error("cloud is not normalized (max norm {0})")]
    NotNormalized(f64),
    #[error("baseline clean and noise error rates are equal")]
    DegenerateBaseline,
    #[error("config hash mismatch: checkpoint {found}, requested {expected}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("point count changed from {clean} to {corrupted}; feature diff needs a count-preserving corruption")]
    CountMismatch { clean: usize, corrupted: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::InvalidConfig(detail.into())
    }
}
