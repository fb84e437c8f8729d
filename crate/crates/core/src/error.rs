use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dataset kind cannot be generated: {0}")]
    InfeasibleKind(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("hessian is degenerate: largest eigenvalue {0:e} is not positive")]
    DegenerateHessian(f64),

    #[error("no closed form for E[M^T M]: rows are neither normalized nor mutually orthogonal")]
    NoClosedForm,

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid batch size: {0}")]
    InvalidBatch(String),

    #[error("contraction factor {0} >= 1: no convergence")]
    NoConvergence(f64),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid fit window: {0}")]
    InvalidWindow(String),

    #[error("invalid graph spec: {0}")]
    InvalidGraphSpec(String),

    #[error("could not draw a connected graph after {attempts} attempts (try a larger p)")]
    CouldNotConnect { attempts: usize },

    #[error("graph is not connected")]
    Disconnected,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator of size {size} exceeds the dense eigensolve limit {limit}")]
    TooLargeForDense { size: usize, limit: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
