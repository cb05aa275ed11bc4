use thiserror::Error;

use crate::siggen::DisturbanceClass;

/// Errors produced anywhere in the codec, generator, or evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters for {class}: {reason}")]
    InvalidParams {
        class: DisturbanceClass,
        reason: String,
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite samples")]
    NonFinite,
    #[error("no model loaded for stage-1 scheme {0}")]
    MissingModel(String),
    #[error("model mismatch: block was produced with model {expected:08x}, store holds {found:08x}")]
    ModelMismatch { expected: u32, found: u32 },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("residual index {index} out of range for signal length {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("bound {e_bound} cannot be met at sample {index} in floating point")]
    BoundUnattainable { index: usize, e_bound: f64 },
    #[error("training failed: {0}")]
    Training(String),
    #[error("reference signal has zero norm")]
    ZeroNorm,
    #[error("class {0} missing from training set")]
    MissingClass(DisturbanceClass),
    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
