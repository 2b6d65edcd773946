use thiserror::Error;

/// Errors raised by the modeling engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("token `{0}` has zero circulating supply")]
    ZeroSupply(String),

    #[error("price of `{0}` is not resolved")]
    MissingPrice(String),

    #[error("token `{token}` depends on unresolved token `{dependency}`")]
    MissingDependency { token: String, dependency: String },

    #[error("cyclic wrap detected among tokens: {}", .0.join(", "))]
    CyclicWrap(Vec<String>),

    #[error("token `{token}` is {actual}, expected {expected}")]
    TokenKind { token: String, expected: &'static str, actual: &'static str },

    #[error("protocol `{protocol}` is {actual}, expected {expected}")]
    ProtocolKind { protocol: String, expected: &'static str, actual: &'static str },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("unknown holder `{0}`")]
    UnknownHolder(String),

    #[error("decline {0} is outside [0, 1]")]
    DeclineOutOfRange(f64),

    #[error("money multiplier undefined: TVR is {0}")]
    UndefinedMultiplier(f64),

    #[error("quantity of `{token}` in `{holder}` would become negative ({value})")]
    NegativeQuantity { holder: String, token: String, value: f64 },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("unbalanced journal entry `{description}`: debits {debits} != credits {credits}")]
    Unbalanced { description: String, debits: f64, credits: f64 },

    #[error("unknown transaction template `{0}`")]
    UnknownTemplate(String),

    #[error("line {line}: {reason}")]
    Script { line: usize, reason: String },

    #[error("truncated PUSH{width} at offset {offset}")]
    TruncatedPush { offset: usize, width: usize },

    #[error("insufficient data: {0} aligned pairs (need at least 3)")]
    InsufficientData(usize),

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("non-positive value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
