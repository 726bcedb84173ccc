use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: invalid manifest: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("{}: expected {expected} bytes for the feature matrix, found {actual}", path.display())]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },

    #[error("{}: expected {expected} records, found {actual}", path.display())]
    RecordCount {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{}: row {row}: {message}", path.display())]
    Record { path: PathBuf, row: usize, message: String },

    #[error("{}: row {row}: unknown class index {class}", path.display())]
    UnknownClassInFile { path: PathBuf, row: usize, class: u32 },

    #[error("{}: non-finite value at row {row}, feature {feature}", path.display())]
    NonFinite { path: PathBuf, row: usize, feature: usize },

    #[error("unknown class index {0}")]
    UnknownClass(u32),

    #[error("feature index {index} out of range (n_features = {n_features})")]
    InvalidFeature { index: usize, n_features: usize },

    #[error("metric undefined on an empty cluster")]
    EmptyCluster,

    #[error("cluster is not a subset of the enclosing group")]
    NotSubset,

    #[error("tree leaves do not partition the group: {0}")]
    Partition(String),

    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),

    #[error("at least {required} rows required, got {actual}")]
    TooFewRows { required: usize, actual: usize },

    #[error("feature subset is empty")]
    EmptyFeatureSubset,

    #[error("all features are disabled")]
    AllFeaturesDisabled,

    #[error("malformed tree document: {0}")]
    MalformedTree(String),

    #[error("leaf is not part of this tree")]
    ForeignLeaf,

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("instance too large for exhaustive oracle ({n} rows, {d} features)")]
    OracleTooLarge { n: usize, d: usize },

    #[error("oracle routing disagrees with tree: {0}")]
    Routing(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("malformed feature map {}: {message}", path.display())]
    FeatureMap { path: PathBuf, message: String },

    #[error("report is inconsistent with its raw counts: {0}")]
    InconsistentReport(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
