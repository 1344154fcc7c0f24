//! Crate-wide error type.

/// Failures surfaced by encoding, decoding, simulation and the apps.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Peeling stalled with systematic cells unrecovered (the listed local
    /// `(row, col)` coordinates) and recomputation was not available.
    #[error("not decodable: {cells:?} unrecoverable in subgrid {subgrid:?}")]
    NotDecodable {
        subgrid: (usize, usize),
        cells: Vec<(usize, usize)>,
    },

    /// A coded-matvec group lost more segments than its single parity covers.
    #[error("group {group} not decodable: {missing} of its segments are missing")]
    GroupNotDecodable { group: usize, missing: usize },

    #[error("enumeration too large: {0}")]
    TooLarge(String),

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("store key not found: {0}")]
    MissingKey(String),

    #[error("matrix is numerically rank zero")]
    RankZero,

    #[error("operator is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
