use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor element was NaN or infinite.
    NonFinite { index: usize },
    /// Bit-width outside the supported set {4, 8}.
    UnsupportedBits(u32),
    /// Group size of zero.
    ZeroGroupSize,
    /// Packed payload or buffer length does not match the header.
    Corrupt(&'static str),
    /// Wire buffer ended before the declared payload.
    Truncated { needed: usize, got: usize },
    /// Length is not a multiple of a required alignment.
    Misaligned { len: usize, multiple: usize },
    /// Inputs that must agree in length do not.
    LengthMismatch { expected: usize, got: usize },
    /// Invalid configuration value.
    Config(&'static str),
    /// Training produced a non-finite value or exceeded the divergence threshold.
    Diverged { iter: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { index } => write!(f, "non-finite value at index {index}"),
            Error::UnsupportedBits(k) => write!(f, "unsupported bit-width {k} (expected 4 or 8)"),
            Error::ZeroGroupSize => f.write_str("group size must be at least 1"),
            Error::Corrupt(what) => write!(f, "corrupt chunk: {what}"),
            Error::Truncated { needed, got } => {
                write!(f, "truncated buffer: need {needed} bytes, got {got}")
            }
            Error::Misaligned { len, multiple } => {
                write!(f, "length {len} is not a multiple of {multiple}")
            }
            Error::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Diverged { iter } => write!(f, "training diverged at iteration {iter}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
