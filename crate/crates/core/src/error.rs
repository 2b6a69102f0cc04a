use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target SDR {target} dB is unreachable; achievable range is ({min} dB, +inf)")]
    UnreachableTarget { target: f64, min: f64 },

    #[error("mask has no clipped samples")]
    NoClippedRegion,

    #[error("division guard: {0}")]
    DivisionGuard(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed mask file: {0}")]
    MalformedMask(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
