use thiserror::Error;

/// Errors produced by index construction, querying and dataset handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite coordinate at point {point}, dimension {dim}")]
    NonFiniteCoordinate { point: usize, dim: usize },

    #[error("k = {k} exceeds dataset size n = {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("no positive even scale fits the cap {cap} (max shifted coordinate {max_coord})")]
    ScaleOverflow { cap: u32, max_coord: f64 },

    #[error("walk distance must be a nonnegative even integer, got {0}")]
    OddWalkDistance(i64),

    #[error("bucket width must be a positive even integer, got {0}")]
    InvalidBucketWidth(i64),

    #[error("universe cap {cap} in dimension {dim} is odd or exceeds the 16-bit walk-table bound")]
    UniverseCapOutOfRange { dim: usize, cap: u32 },

    #[error("coordinate {value} in dimension {dim} exceeds the walk-table universe cap {cap}")]
    CoordinateOutOfUniverse { dim: usize, value: u32, cap: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {format} record at offset {offset}: {reason}")]
    MalformedRecord {
        format: &'static str,
        offset: u64,
        reason: String,
    },

    #[error("index file corrupted: {0}")]
    Corrupted(String),

    #[error("index file version {got} not supported (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyDataset => "empty_dataset",
            Error::NonFiniteCoordinate { .. } => "non_finite",
            Error::KTooLarge { .. } => "k_too_large",
            Error::ScaleOverflow { .. } => "scale_overflow",
            Error::OddWalkDistance(_) => "odd_walk_distance",
            Error::InvalidBucketWidth(_) => "invalid_bucket_width",
            Error::UniverseCapOutOfRange { .. } => "universe_cap",
            Error::CoordinateOutOfUniverse { .. } => "coordinate_out_of_universe",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Io(_) => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::Corrupted(_) => "corrupted",
            Error::VersionMismatch { .. } => "version_mismatch",
        }
    }
}
