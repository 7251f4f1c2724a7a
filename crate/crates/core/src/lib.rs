//! Fair allocation of differential-privacy budgets across analysts and
//! their pipelines.

pub mod econ;
pub mod error;
pub mod ids;
pub mod ledger;
pub mod metrics;
pub mod packer;
pub mod rng;
pub mod schedulers;
pub mod sim;
pub mod solver;
pub mod workload;

pub use econ::{PropertyReport, Regime, Verdict};
pub use error::{Error, Result};
pub use ids::{AnalystId, BlockId, DeviceId, PipelineId};
pub use ledger::{DeviceProfile, Ledger, PrivacyBlock, EPS_TOL};
pub use metrics::{FairnessParams, MetricSeries, RoundMetrics, RoundOutcome};
pub use solver::{AllocationProblem, AnalystAllocation, SolverOptions};
pub use workload::{AnalystDemand, DemandFile, PipelineDemand, ShareVector, WorkloadConfig};
