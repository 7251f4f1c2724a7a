use crate::ids::{AnalystId, BlockId, PipelineId};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid epsilon {0}: privacy losses must be finite and non-negative")]
    InvalidEpsilon(f64),

    #[error("charging {requested} on block {block} exceeds budget {budget} (consumed {consumed})")]
    BudgetExceeded {
        block: BlockId,
        budget: f64,
        consumed: f64,
        requested: f64,
    },

    #[error("block {0} is unknown or retired")]
    UnknownBlock(BlockId),

    #[error("demand is empty: {0}")]
    EmptyDemand(String),

    #[error("pipelines from analysts {expected} and {found} cannot be aggregated together")]
    MixedOwnership { expected: AnalystId, found: AnalystId },

    #[error("utility {0} is not strictly positive; filter inactive analysts first")]
    DegenerateShare(f64),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:e})")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("pipeline selection {0:?} does not fit the granted share")]
    InfeasibleSelection(Vec<PipelineId>),

    #[error("accounting error: {0}")]
    AccountingError(String),

    #[error("round {round}: {source}")]
    Scheduler {
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation needs at least one round")]
    InvalidRounds,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
