use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// The bytes do not follow the container layout (bad magic, bad lengths,
    /// nonzero padding, trailing garbage, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A checksum did not match the payload it covers.
    #[error("corruption detected in {context}: stored crc {stored:#010x}, computed {computed:#010x}")]
    Corruption {
        context: String,
        stored: u32,
        computed: u32,
    },

    /// Structurally valid input carrying invalid numbers.
    #[error("data error: {0}")]
    Data(String),

    #[error("partition error: sub-vector length {d} does not divide {cols} columns")]
    Partition { d: usize, cols: usize },

    #[error("seeding error: {0}")]
    Seeding(String),

    /// A caller broke an operation's precondition (shape mismatch, index out
    /// of range, invalid configuration).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("calibration diverged at epoch {epoch}, step {step}: {dump}")]
    Diverged {
        epoch: usize,
        step: usize,
        dump: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
