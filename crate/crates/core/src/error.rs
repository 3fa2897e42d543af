use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix did not have the dimension the operation needs.
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// A configuration value is out of its allowed range.
    Config(String),
    /// Malformed input data (labels, batches, architectures).
    Input(String),
    /// Training produced a non-finite loss.
    Diverged { epoch: usize },
    /// A membrane voltage became non-finite during sleep.
    SleepNumeric { layer: usize, step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected dimension {expected}, got {got}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::SleepNumeric { layer, step } => {
                write!(f, "non-finite membrane voltage in plastic layer {layer} at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
