use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("crop exceeds image: side {side} does not fit in {height}x{width}")]
    CropExceedsImage { side: usize, height: usize, width: usize },
    #[error("image {height}x{width} cannot be split into a 3x3 grid")]
    NotTileable { height: usize, width: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected 9 tiles, got {0}")]
    TileCount(usize),
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("at least one negative is required")]
    EmptyNegatives,
    #[error("cannot sample {k} negatives from {available} candidates")]
    TooFewNegatives { k: usize, available: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("WINCon loss requires one WIN embedding per batch entry (batch {batch}, win {win})")]
    MissingWin { batch: usize, win: usize },
    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("class {0} has no training samples")]
    ClassAbsent(usize),
    #[error("data has rank zero after centering")]
    RankZero,
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("bad checkpoint magic: found {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version: found {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line driver: 2 for configuration
    /// errors, 3 for I/O and format errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::NonFinite(_) => 4,
            Error::Io(_)
            | Error::Image(_)
            | Error::Json(_)
            | Error::Parse(_)
            | Error::Checkpoint(_)
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. } => 3,
            _ => 1,
        }
    }
}
