use std::fmt;

/// Errors surfaced by the solvers and model constructors.
///
/// The variants map onto the CLI exit codes: `InvalidModel` is a model error
/// (exit 2), `Numeric` and `Search` are numeric failures (exit 3),
/// `InvalidArgument` and `Unsupported` are configuration errors (exit 4).
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The market or endowment violates a structural precondition
    /// (arbitrage, nonpositive probabilities, nonpositive endowment, ...).
    InvalidModel(String),
    /// A parameter is outside its domain (bad exponent, bad truncation
    /// level, nonpositive tilt, ...).
    InvalidArgument(String),
    /// An iterative routine failed to converge or bracketing failed.
    Numeric(String),
    /// A constructive search reported failure (e.g. no oscillating pairing
    /// trace could be produced at the requested levels).
    Search(String),
    /// The requested configuration is recognized but outside what the
    /// implementation can evaluate faithfully.
    Unsupported(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidModel(m) => write!(f, "invalid model: {m}"),
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
            Error::Search(m) => write!(f, "search failed: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported configuration: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
