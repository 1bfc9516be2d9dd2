use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unresolvable moment: {0}")]
    UnresolvableKey(String),

    #[error("contradictory pins on {key}: {first} vs {second}")]
    ContradictoryPins { key: String, first: f64, second: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("missing dual information: {0}")]
    MissingDuals(String),

    #[error("strategy enumeration cap exceeded: {count} > {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
