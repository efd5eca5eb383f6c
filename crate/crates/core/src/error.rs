use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A caller broke an operation's precondition.
    Contract(String),
    /// Combined prefix + text length exceeds the model's context.
    Length { len: usize, max: usize },
    /// Token id outside the vocabulary.
    Vocab { id: usize, vocab: usize },
    /// Invalid configuration value.
    Config(String),
    /// A sample carries no loss mass (empty mask or all-zero weights).
    DegenerateSample,
    /// NaN or infinity appeared in a value that must be finite.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: dimension mismatch between {left:?} and {right:?}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Length { len, max } => {
                write!(f, "sequence length {len} exceeds max_seq_len {max}")
            }
            Error::Vocab { id, vocab } => {
                write!(f, "token id {id} out of range for vocabulary of {vocab}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DegenerateSample => write!(f, "sample has zero loss weight mass"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
