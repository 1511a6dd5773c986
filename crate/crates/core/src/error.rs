use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image payload: {0}")]
    CorruptPayload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("weight {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("eigensolver did not converge")]
    EigensolverFailure,

    #[error("quantization step must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("empty input")]
    EmptyInput,

    #[error("need at least {needed} distinct training blocks, got {available}")]
    InsufficientTrainingData { needed: usize, available: usize },
    #[error("codeword index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("malformed stream: {0}")]
    MalformedStream(String),
    #[error("value {0} exceeds the largest size category")]
    TableOverflow(i64),
    #[error("bitstream codebook {stream:016x} does not match supplied codebook {supplied:016x}")]
    UnknownCodebook { stream: u64, supplied: u64 },

    #[error("image too small for multi-scale SSIM: {width}x{height}, need at least {min} per side")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("need at least {needed} RD points per curve, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("RD curves have no overlapping quality range")]
    NoQualityOverlap,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
