use thiserror::Error;

/// Errors raised by tree handling, inference and summaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error("newick syntax error at byte {position}: {message}")]
    Newick { position: usize, message: String },

    #[error("duplicate node label `{0}`")]
    DuplicateLabel(String),

    #[error("unknown node label `{0}`")]
    UnknownLabel(String),

    #[error("observation value {value} outside alphabet of size {alphabet}")]
    ValueOutOfRange { value: u32, alphabet: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("jump vector has length {got}, tree has {expected} branches")]
    JumpLength { expected: usize, got: usize },

    #[error("unknown group {0}")]
    UnknownGroup(usize),

    #[error("value {0} has zero predictive probability")]
    ZeroProbability(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance too large for exact enumeration: {0}")]
    TooLarge(String),

    #[error("empty sample segment: {0}")]
    EmptySegment(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
