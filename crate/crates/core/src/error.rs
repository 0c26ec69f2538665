use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate interpolation point {0}")]
    DuplicatePoint(String),
    #[error("unsupported tile size T={0} (supported range is 4..=8)")]
    UnsupportedTile(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("failed to allocate {bytes} bytes for {what}")]
    Allocation { what: &'static str, bytes: usize },
}

pub type Result<T, E = ConvError> = std::result::Result<T, E>;
