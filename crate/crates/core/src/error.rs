use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Q-format `{0}`")]
    InvalidFormat(String),

    #[error("invalid quantization parameters: {0}")]
    InvalidParams(String),

    #[error("empty input")]
    EmptyInput,

    #[error("capacity exceeded: {what} (limit {limit}, got {got})")]
    Capacity {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("raw value {value} out of range for {format}")]
    OutOfRange { value: i64, format: String },

    #[error("invalid configuration for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("unknown operator `{0}`")]
    UnknownOperator(String),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed tensor file: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}
