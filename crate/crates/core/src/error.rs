use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("record {position}: malformed triple ({reason})")]
    MalformedTriple { position: usize, reason: String },

    #[error("entity `{0}` is not present in the knowledge graph")]
    UnknownEntity(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("triple set is empty, nothing to describe")]
    EmptyTripleSet,

    #[error("{0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("token index {index} outside vocabulary of size {size}")]
    UnknownToken { index: usize, size: usize },

    #[error("reference text is empty")]
    EmptyReference,

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("the self graph cannot be removed")]
    SelfGraphRemoval,

    #[error("no graphs left to encode")]
    NoGraphs,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: u64, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("every {0} instance was skipped")]
    NoTrainableInstances(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by user-supplied data rather than usage or
    /// internal invariants.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedTriple { .. }
                | Error::UnknownEntity(_)
                | Error::InvalidInstance(_)
                | Error::EmptyTripleSet
                | Error::EmptyReference
                | Error::CorruptCheckpoint { .. }
                | Error::VersionMismatch { .. }
                | Error::Parse { .. }
                | Error::NoTrainableInstances(_)
                | Error::Io(_)
        )
    }
}
