//! Simulation config files.

use dpbalance_core::schedulers::Scheduler;
use dpbalance_core::sim::SimConfig;
use dpbalance_core::{FairnessParams, WorkloadConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub scheduler: Scheduler,
    pub workload: WorkloadConfig,
    pub beta: f64,
    /// Defaults to `|1 - beta| / beta`.
    pub lambda: Option<f64>,
    pub rho: f64,
    pub rounds: u64,
    /// Overrides `workload.seed` when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            scheduler: Scheduler::DpBalance,
            workload: WorkloadConfig::default(),
            beta: 2.2,
            lambda: None,
            rho: 0.0,
            rounds: 10,
            seed: None,
            out: None,
        }
    }
}

impl CliConfig {
    /// Parses and validates a config; errors name the offending line or field.
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: CliConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn params(&self) -> Result<FairnessParams, String> {
        FairnessParams::new(self.beta, self.lambda, self.rho).map_err(|e| format!("beta/lambda/rho: {e}"))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err("rounds: must be at least 1".into());
        }
        self.params()?;
        self.workload
            .validate()
            .map_err(|e| format!("workload.{}", e.to_string().trim_start_matches("invalid configuration: ")))
    }

    pub fn sim_config(&self) -> Result<SimConfig, String> {
        let mut workload = self.workload.clone();
        if let Some(seed) = self.seed {
            workload.seed = seed;
        }
        Ok(SimConfig {
            workload: Some(workload),
            params: self.params()?,
            scheduler: self.scheduler,
        })
    }
}
