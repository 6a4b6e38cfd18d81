use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped by [`ErrorKind`] so front ends can map them onto
/// process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {rows}x{cols} is smaller than the 32x32 minimum")]
    DimensionTooSmall { rows: usize, cols: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("model not initialised from a pretrained checkpoint: {0}")]
    Untrained(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corrupt container header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("unsupported container version {found} (reader supports {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error category, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionTooSmall { .. } => {
                ErrorKind::Config
            }
            Error::Json(_) => ErrorKind::Config,
            Error::Io(_)
            | Error::Csv(_)
            | Error::CorruptHeader(_)
            | Error::TruncatedPayload { .. }
            | Error::VersionMismatch { .. } => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }

    /// Process exit code for this error: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Io => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
