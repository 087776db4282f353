use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("insufficient length: need {needed} bits, have {available} (short by {})", needed - available)]
    InsufficientLength { needed: usize, available: usize },

    #[error("lineage tracking was not enabled for this assignment")]
    LineageMissing,

    #[error("mismatched block counts: {left} vs {right}")]
    MismatchedBlocks { left: usize, right: usize },

    #[error("no known distance from {ancestor} to {descendant}")]
    MissingDistance { ancestor: NodeId, descendant: NodeId },

    #[error("correlation estimate {0} is not positive; distance is out of range")]
    OutOfRange(f64),

    #[error("every deep estimate is infinite")]
    AllInfinite,

    #[error("node {node} has no descendants {offset} levels below")]
    InsufficientDepth { node: NodeId, offset: usize },

    #[error("non-finite dissimilarity entry")]
    NonFinite,

    #[error("reconstruction stalled at level {level} with {remaining} subtrees left")]
    Stall { level: usize, remaining: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("need at least 4 leaves, got {0}")]
    TooFewLeaves(usize),

    #[error("leaf label sets differ")]
    LeafSetMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
