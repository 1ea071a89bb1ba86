use alloc::string::String;
use core::fmt;

/// Errors raised by the engine.
///
/// Variants map onto the three failure classes callers care about: a shape
/// disagreement between operands, a non-finite value entering a kernel, and a
/// call that breaks an API contract (wrong order, wrong argument value).
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree. `operand` names the offending argument.
    Dimension { op: &'static str, operand: &'static str, detail: String },
    /// A NaN or infinity reached a kernel input.
    NonFinite { op: &'static str, operand: &'static str },
    /// The call violates a usage contract.
    Usage(String),
    /// An invalid configuration value.
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, operand: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, operand, detail: detail.into() }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, operand, detail } => {
                write!(f, "{op}: dimension mismatch in `{operand}`: {detail}")
            }
            Error::NonFinite { op, operand } => write!(f, "{op}: non-finite value in `{operand}`"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
