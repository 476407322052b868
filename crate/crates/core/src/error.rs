use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("node budget exceeded: {nodes} nodes requested, limit is {limit}")]
    NodeBudget { nodes: usize, limit: usize },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("stage {stage} out of range for node at stage {node_stage}")]
    StageOutOfRange { stage: usize, node_stage: usize },
    #[error("stopping times live on different trees ({0} vs {1} nodes)")]
    TreeMismatch(usize, usize),
    #[error("not a stopping time: {0}")]
    NotAdapted(String),
    #[error("event is not measurable at the stop frontier of the meet (node `{0}`)")]
    NotMeasurable(String),
    #[error("evaluation requires S <= tau pathwise (violated at node `{0}`)")]
    OrderViolated(String),
    #[error("terminal value missing on the tau frontier at node `{0}`")]
    MissingValue(String),
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("explicit g-scheme is not monotone at node `{node}` (sensitivity margin {margin:e})")]
    SchemeConstraint { node: String, margin: f64 },
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),
    #[error("{what} budget exceeded: {needed} > {limit}")]
    Budget { what: &'static str, needed: u128, limit: u128 },
    #[error("optimal tuple fails plug-in check at node `{node}`: value {value}, plug-in {plug_in}")]
    PlugIn { node: String, value: f64, plug_in: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
