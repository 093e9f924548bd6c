//! Error type shared across the pipeline, with a stable exit-code mapping
//! for the CLI (0 ok, 2 usage, 3 format, 4 numeric, 5 I/O).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("non-monotonic timestamp at event {index}: {t_us} < previous {prev_us}")]
    NonMonotonic { index: usize, t_us: u64, prev_us: u64 },

    #[error("event {index} coordinate ({x},{y}) outside sensor {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("unsupported container version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("container structure error: {0}")]
    Structure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::NonMonotonic { .. }
            | Error::OutOfBounds { .. }
            | Error::ChecksumMismatch { .. }
            | Error::VersionMismatch { .. }
            | Error::Structure(_)
            | Error::Format(_) => 3,
            Error::ShapeMismatch(_) | Error::Numeric(_) => 4,
            Error::Io(_) => 5,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_cover_spec_classes() {
        assert_eq!(Error::invalid("x").exit_code(), 2);
        assert_eq!(
            Error::BadMagic {
                expected: *b"EVT1",
                found: *b"XXXX"
            }
            .exit_code(),
            3
        );
        assert_eq!(Error::Numeric("nan".into()).exit_code(), 4);
        assert_eq!(
            Error::Io(std::io::Error::new(std::io::ErrorKind::Other, "x")).exit_code(),
            5
        );
    }
}
