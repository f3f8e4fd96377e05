use thiserror::Error;

use crate::graph::NodeId;

/// Errors raised by graph construction, simulation, inference and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cycle detected: {}", .cycle.join(" -> "))]
    Cycle { cycle: Vec<NodeId> },

    #[error("node `{node}` references unknown parent `{parent}`")]
    DanglingParent { node: NodeId, parent: NodeId },

    #[error("plate mismatch at node `{node}`: {detail}")]
    PlateMismatch { node: NodeId, detail: String },

    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),

    #[error("node `{node}` declares unknown plate `{plate}`")]
    UnknownPlate { node: NodeId, plate: String },

    #[error("invalid prior on `{node}`: {detail}")]
    InvalidPrior { node: NodeId, detail: String },

    #[error("mechanism for `{node}` rejects its inputs: {detail}")]
    Arity { node: NodeId, detail: String },

    #[error("exogenous assignment is missing `{node}`")]
    IncompleteExogenous { node: NodeId },

    #[error("structural equation for `{node}` evaluated outside its domain: {detail}")]
    EquationDomain { node: NodeId, detail: String },

    #[error("at least 2 samples are required, got {n}")]
    InsufficientSamples { n: usize },

    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),

    #[error("value kind mismatch at `{node}`: {detail}")]
    KindMismatch { node: NodeId, detail: String },

    #[error("conflicting interventions on `{node}`")]
    Conflict { node: NodeId },

    #[error("observation of `{node}`[{index}] is inconsistent with the model: {detail}")]
    InconsistentObservation {
        node: NodeId,
        index: usize,
        detail: String,
    },

    #[error("cannot abduct noise for `{node}`: {detail}")]
    AbductionUnsupported { node: NodeId, detail: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unsupported action at `{node}`: {detail}")]
    UnsupportedAction { node: NodeId, detail: String },

    #[error("behavior probability {p} for `{node}` in world {world} is outside (0, 1]")]
    InvalidBehaviorProbability { node: NodeId, world: u64, p: f64 },

    #[error("all {n} logged worlds are inconsistent with the model")]
    AllWorldsInconsistent { n: usize },

    #[error("query `{query}` is undefined on the supplied values")]
    UndefinedQuery { query: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no {criterion} threshold pair meets tolerance {tolerance}; closest gap {closest_gap} at tau = ({tau0}, {tau1})")]
    InfeasibleConstraint {
        criterion: String,
        tolerance: f64,
        closest_gap: f64,
        tau0: f64,
        tau1: f64,
    },

    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),

    #[error("malformed model description: {0}")]
    ModelFormat(String),

    #[error("i/o error: {0}")]
    Io(String),
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
