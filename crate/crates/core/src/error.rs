use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate gaussian: covariance condition number {condition:.3e} exceeds {limit:.0e}")]
    DegenerateGaussian { condition: f64, limit: f64 },

    #[error("invalid label {label} (expected < {num_classes})")]
    InvalidLabel { label: u8, num_classes: usize },

    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),

    #[error("scene spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("encode error: {0}")]
    Encode(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while decoding one of the binary formats (GMSG, VOXG, FPRM).
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("non-finite value in field `{field}` of record {record}")]
    NonFinite { field: &'static str, record: usize },

    #[error("invalid field `{field}`: {detail}")]
    InvalidField { field: &'static str, detail: String },
}
