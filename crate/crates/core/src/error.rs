use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },
    #[error("{op}: batch size {batch} is not allowed here")]
    BatchSize { op: &'static str, batch: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("protocol error: query {query} has no valid gallery match")]
    Protocol { query: usize },
    #[error("cannot parse {input:?} at position {position}: expected {expected}")]
    Parse { input: String, position: usize, expected: &'static str },
    #[error("loss became non-finite at epoch {epoch}; first bad parameter: {parameter}")]
    Divergence { epoch: usize, parameter: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}
