use alloc::string::String;
use core::fmt;

/// Errors produced by kernels, network construction and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor or parameter shapes disagree.
    ShapeMismatch { context: &'static str, expected: String, found: String },
    /// Channels do not divide evenly into groups or paths.
    Divisibility { context: &'static str, channels: usize, divisor: usize },
    /// A zero-sized dimension was requested.
    EmptyShape,
    /// A configuration value is out of its valid range.
    InvalidConfig(String),
    /// A class label is not below the number of classes.
    LabelOutOfRange { label: usize, classes: usize },
    /// A NaN or infinity showed up where a finite value is required.
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, expected, found } => {
                write!(f, "{context}: shape mismatch, expected {expected}, found {found}")
            }
            Error::Divisibility { context, channels, divisor } => {
                write!(f, "{context}: {channels} channels not divisible by {divisor}")
            }
            Error::EmptyShape => f.write_str("tensor dimensions must all be at least 1"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl fmt::Debug,
    found: impl fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: alloc::format!("{expected:?}"),
        found: alloc::format!("{found:?}"),
    }
}
