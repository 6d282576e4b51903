use thiserror::Error;

/// Errors raised by the compression engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Input shapes or values that do not satisfy an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is out of range.
    #[error("invalid config: {0}")]
    Config(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value in {term}")]
    Numeric { term: &'static str },

    /// API misuse, e.g. a gradient tape replayed against a different network.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training aborted after repeated non-finite losses.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    BadVersion(u16),

    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
