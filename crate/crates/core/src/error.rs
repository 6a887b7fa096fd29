use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("width mismatch: {left} bits vs {right} bits")]
    WidthMismatch { left: usize, right: usize },

    #[error("unsupported hash width {0} (must be a positive multiple of 8, at most {max})", max = crate::bits::MAX_WIDTH)]
    UnsupportedWidth(usize),

    #[error("invalid hex string: {0}")]
    InvalidHex(String),

    #[error("k = {k} exceeds width d = {d}")]
    KExceedsWidth { k: usize, d: usize },

    #[error("mask has {found} set bits, expected {expected}")]
    MaskWeight { expected: usize, found: usize },

    #[error("rank out of range for d = {d}, k = {k}")]
    RankOutOfRange { d: usize, k: usize },

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("duplicate clip id `{0}`")]
    DuplicateClipId(String),

    #[error("invalid query parameters: {0}")]
    InvalidParams(String),

    #[error("timestep {t} outside trace of length {len}")]
    ScheduleOutOfRange { t: usize, len: usize },

    #[error("no labeled queries to evaluate")]
    EmptyQuerySet,

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("codebook format: {0}")]
    Format(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
