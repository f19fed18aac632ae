use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("OCDM needs an even subcarrier count, got {0}")]
    OddChirpSize(usize),
    #[error("ODSS subcarriers cover {covered:.3} Hz but the band is {bandwidth:.3} Hz")]
    BandwidthMismatch { covered: f64, bandwidth: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("subcarrier {0} has a zero channel tap")]
    ZeroTap(usize),
    #[error("sparsity {k} exceeds the {m} available measurements")]
    SparsityTooLarge { k: usize, m: usize },
    #[error("matrix is numerically singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, Error>;
