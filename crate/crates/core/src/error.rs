use std::path::PathBuf;

/// Errors produced by the refinement engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mask is empty")]
    EmptyMask,

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("dimension mismatch in {file}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        file: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("corrupt encoding in {file}: {reason}")]
    CorruptEncoding { file: String, reason: String },

    #[error("invalid configuration field `{0}`")]
    ConfigInvalid(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("no contour pixel has positive split weight")]
    NoPositiveWeight,

    #[error("split path does not separate the mask")]
    DegeneratePath,

    #[error("nodes {0} and {1} are not neighbors")]
    NotNeighbors(u32, u32),

    #[error("unknown node {0}")]
    UnknownNode(u32),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("feature dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("relevance list is empty")]
    EmptyList,

    #[error("scene {0} missing from prediction directory")]
    MissingScene(String),

    #[error("frame mismatch for {0}")]
    FrameMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
