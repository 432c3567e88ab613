use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-deterministic function: {0}")]
    NonDeterministic(String),

    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocab { id: u32, vocab_size: usize },

    #[error("length budget {cap} is smaller than the {skeleton}-token template skeleton")]
    Budget { cap: usize, skeleton: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing qrels for query `{0}`")]
    MissingQrels(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}:{line}: {msg} (byte offset {offset})")]
    Parse {
        path: String,
        line: usize,
        offset: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Wraps the error with a location, keeping its kind for exit codes.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Budget { .. } => 2,
            Error::NonFinite(_) | Error::Numeric(_) | Error::DegenerateEmbedding(_) => 4,
            _ => 3,
        }
    }
}
