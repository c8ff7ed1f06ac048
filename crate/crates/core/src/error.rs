use thiserror::Error;

/// Errors produced by the eigenlane library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("lanes live on different sampling grids")]
    GridMismatch,

    #[error("requested rank {requested} exceeds numerical rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("requested {requested} clusters but only {distinct} distinct points are available")]
    TooManyClusters { requested: usize, distinct: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{count} nodes exceed the exact clique enumeration bound of {max}")]
    TooManyNodes { count: usize, max: usize },

    #[error("index {index} out of range for {len} items")]
    IndexError { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
