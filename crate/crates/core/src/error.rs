use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("value {value} out of range for variable {var} (cardinality {cardinality})")]
    ValueOutOfRange { var: usize, value: u32, cardinality: usize },

    #[error("no latent input supplied for interface index {0}")]
    MissingLatentInput(usize),

    #[error("cycle detected through node {0}")]
    Cycle(NodeId),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("unsupported model version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("sum node {node} weights are not normalized (total {total})")]
    Normalization { node: NodeId, total: f64 },

    #[error("no interface roots")]
    NoInterfaceRoots,

    #[error("degenerate structure: {0}")]
    Degenerate(String),

    #[error("unfolding requires at least one step")]
    ZeroSteps,

    #[error("horizon must be at least 1")]
    ZeroHorizon,

    #[error("unfolded network would have {nodes} nodes, above the limit of {limit}")]
    SizeGuard { nodes: usize, limit: usize },

    #[error("state has no support in the model")]
    NoSupport,

    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
