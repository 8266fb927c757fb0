use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Malformed molecular graph (bad indices, duplicate bonds, disconnected).
    Structure(String),
    /// Two inputs that must agree in atom count do not.
    SizeMismatch { expected: usize, found: usize },
    /// Rigid alignment could not be computed.
    Alignment(String),
    /// A symmetry scheme references atoms outside the conformation or is malformed.
    Scheme(String),
    /// Boost step index outside `0..M`.
    StepOutOfRange { step: usize, steps: usize },
    /// Coordinates or a loss became NaN/inf.
    NonFinite { step: usize },
    /// The idealized geometry table lacks an entry.
    MissingTableEntry(String),
    /// Invalid noise schedule.
    Schedule(String),
    /// A required list was empty.
    Empty(&'static str),
    /// Zero-length direction passed where a unit vector is required.
    ZeroLength,
    /// Invalid input value.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Structure(msg) => write!(f, "invalid molecular graph: {msg}"),
            Error::SizeMismatch { expected, found } => {
                write!(f, "atom count mismatch: expected {expected}, found {found}")
            }
            Error::Alignment(msg) => write!(f, "alignment failed: {msg}"),
            Error::Scheme(msg) => write!(f, "invalid symmetry scheme: {msg}"),
            Error::StepOutOfRange { step, steps } => {
                write!(f, "boost step {step} out of range 0..{steps}")
            }
            Error::NonFinite { step } => write!(f, "non-finite values at step {step}"),
            Error::MissingTableEntry(key) => write!(f, "geometry table has no entry for {key}"),
            Error::Schedule(msg) => write!(f, "invalid noise schedule: {msg}"),
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::ZeroLength => f.write_str("zero-length direction vector"),
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
