use std::path::PathBuf;

/// Errors produced by the library.
///
/// Each failure class the command line needs to distinguish (bad input,
/// numerical breakdown, I/O) has its own variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid IPCC matrix: {0}")]
    InvalidIpcc(String),

    #[error("correlation matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("factorization failed in scene {scene}, step {step}: pivot {pivot} is {value:e}")]
    Factorization {
        scene: usize,
        step: usize,
        pivot: usize,
        value: f64,
    },

    #[error("degenerate heading: displacement is zero")]
    DegenerateHeading,

    #[error("feature row {0} has zero norm")]
    DegenerateFeature(usize),

    #[error("column {0} has zero sample variance")]
    ZeroVariance(usize),

    #[error("agent index {index} out of range for {count} agents")]
    AgentIndex { index: usize, count: usize },

    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
