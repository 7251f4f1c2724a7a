//! Round-based simulation.
//!
//! Each round emits fresh blocks, admits arriving analysts, runs the
//! scheduler, charges the ledger and records metrics. The synthetic workload
//! of a round is a pure function of the config and the round index, so the
//! state carries no generator and a snapshot resumes exactly.

use crate::error::{Error, Result};
use crate::ids::{BlockId, DeviceId};
use crate::ledger::Ledger;
use crate::metrics::{FairnessParams, MetricSeries, RoundMetrics, RoundOutcome};
use crate::schedulers::{pending_from, AllocationPlan, Pending, Scheduler};
use crate::workload::{generate_workload, DemandFile, PipelineDemand, WorkloadConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Synthetic workload; `None` for a fixed demand file.
    pub workload: Option<WorkloadConfig>,
    pub params: FairnessParams,
    pub scheduler: Scheduler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationState {
    pub config: SimConfig,
    pub ledger: Ledger,
    pub pending: Pending,
    /// Index of the next round to run.
    pub clock: u64,
    /// Every physical charge applied to each block, in order.
    pub audit: BTreeMap<BlockId, Vec<f64>>,
    pub metrics: MetricSeries,
}

impl SimulationState {
    pub fn new(config: SimConfig) -> Result<Self> {
        let mut ledger = Ledger::new(None);
        if let Some(w) = &config.workload {
            w.validate()?;
            ledger.rdp_order = w.rdp_order;
            for d in w.devices() {
                ledger.add_device(d);
            }
        }
        Ok(Self {
            config,
            ledger,
            pending: Pending::new(),
            clock: 0,
            audit: BTreeMap::new(),
            metrics: MetricSeries::default(),
        })
    }

    /// State holding a demand file's blocks and pipelines; no further arrivals.
    pub fn from_demand_file(file: &DemandFile, params: FairnessParams, scheduler: Scheduler) -> Result<Self> {
        file.validate()?;
        Ok(Self {
            config: SimConfig {
                workload: None,
                params,
                scheduler,
            },
            ledger: file.ledger(),
            pending: pending_from(file),
            clock: 0,
            audit: BTreeMap::new(),
            metrics: MetricSeries::default(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Runs one round and returns its metrics.
    pub fn step_round(&mut self) -> Result<RoundMetrics> {
        self.step_round_with_plan().map(|(m, _)| m)
    }

    /// Runs one round, also returning the scheduler's plan.
    pub fn step_round_with_plan(&mut self) -> Result<(RoundMetrics, AllocationPlan)> {
        let round = self.clock;
        if let Some(w) = self.config.workload.clone() {
            let generated = generate_workload(&w, round);
            for (device, block) in generated.blocks {
                self.ledger.add_block(&device, block, round)?;
            }
            for pipelines in generated.analysts {
                let anchored: Vec<PipelineDemand> =
                    pipelines.into_iter().map(|p| reanchor(&self.ledger, p)).collect();
                if let Some(first) = anchored.first() {
                    self.pending
                        .entry(first.analyst_id.clone())
                        .or_default()
                        .extend(anchored);
                }
            }
        }

        let plan = self
            .config
            .scheduler
            .schedule(&self.ledger, &self.pending, round, &self.config.params)?;

        for (block, _, _) in plan.physical_charges(&self.ledger)? {
            if !self.ledger.is_live(&block) {
                return Err(Error::AccountingError(format!(
                    "round {round}: plan uses retired block {block}"
                )));
            }
        }
        for (block, pipeline, eps) in plan.physical_charges(&self.ledger)? {
            self.ledger.charge(&block, eps).map_err(|e| {
                Error::AccountingError(format!(
                    "round {round}: charging {eps} to {block} for {pipeline} failed: {e}"
                ))
            })?;
            self.audit.entry(block).or_default().push(eps);
        }

        for pipelines in self.pending.values_mut() {
            pipelines.retain(|p| !plan.per_pipeline.contains_key(&p.pipeline_id));
        }
        self.pending.retain(|_, p| !p.is_empty());

        let outcome = RoundOutcome {
            utilities: plan.utilities(),
            pipelines_allocated: plan.pipelines_allocated(),
            pipeline_units: plan.pipeline_units(),
            blocks_retired: self.ledger.retired_count(),
        };
        let metrics = self.metrics.push(round, &outcome, self.config.params.beta)?.clone();
        self.clock += 1;
        Ok((metrics, plan))
    }

    /// Checks that every block's consumption equals the sum of its recorded charges.
    pub fn audit(&self) -> Result<()> {
        for (id, block) in &self.ledger.blocks {
            let charged = self
                .audit
                .get(id)
                .map_or(0.0, |c| c.iter().fold(0.0, |acc, v| acc + v));
            if charged != block.consumed_eps {
                return Err(Error::AccountingError(format!(
                    "block {id}: charges sum to {charged}, ledger holds {}",
                    block.consumed_eps
                )));
            }
        }
        if let Some(id) = self.audit.keys().find(|k| !self.ledger.blocks.contains_key(*k)) {
            return Err(Error::AccountingError(format!("charges recorded for unknown block {id}")));
        }
        Ok(())
    }
}

/// Moves a pipeline's window on each device onto that device's newest live
/// blocks when any block of the window is already retired.
fn reanchor(ledger: &Ledger, mut pipeline: PipelineDemand) -> PipelineDemand {
    if pipeline.demands.keys().all(|k| ledger.is_live(k)) {
        return pipeline;
    }
    let mut by_device: BTreeMap<DeviceId, Vec<BlockId>> = BTreeMap::new();
    for k in pipeline.demands.keys() {
        if let Some(b) = ledger.block(k) {
            by_device.entry(b.device_id.clone()).or_default().push(k.clone());
        }
    }
    for (device, window) in by_device {
        if window.iter().all(|k| ledger.is_live(k)) {
            continue;
        }
        let mut live: Vec<&BlockId> = ledger.live_blocks_of(&device).map(|b| &b.block_id).collect();
        live.sort_by(|a, b| {
            let ra = ledger.block(a).map(|x| x.created_round);
            let rb = ledger.block(b).map(|x| x.created_round);
            rb.cmp(&ra).then(b.cmp(a))
        });
        let fresh: Vec<BlockId> = live.into_iter().take(window.len()).cloned().collect();
        let eps = pipeline.demands[&window[0]];
        let losses: Vec<f64> = window.iter().map(|k| pipeline.losses[k]).collect();
        for k in &window {
            pipeline.demands.remove(k);
            pipeline.losses.remove(k);
        }
        for (k, l) in fresh.into_iter().zip(losses) {
            pipeline.demands.insert(k.clone(), eps);
            pipeline.losses.insert(k, l);
        }
    }
    pipeline
}

/// Runs `rounds` rounds from a fresh state.
pub fn run(config: &SimConfig, rounds: u64) -> Result<MetricSeries> {
    Ok(run_state(config, rounds)?.metrics)
}

/// Like [`run`] but returns the final state.
pub fn run_state(config: &SimConfig, rounds: u64) -> Result<SimulationState> {
    if rounds == 0 {
        return Err(Error::InvalidRounds);
    }
    let mut state = SimulationState::new(config.clone())?;
    for _ in 0..rounds {
        state.step_round()?;
    }
    Ok(state)
}

/// Independent runs per beta from the same seed, with `lambda` at its
/// alpha-fair value. Up to `jobs` runs execute at once.
pub fn sweep_beta(
    config: &SimConfig,
    betas: &[f64],
    rounds: u64,
    jobs: usize,
) -> Result<Vec<(f64, MetricSeries)>> {
    let configs: Vec<SimConfig> = betas
        .iter()
        .map(|&b| {
            Ok(SimConfig {
                params: FairnessParams::new(b, None, config.params.rho)?,
                ..config.clone()
            })
        })
        .collect::<Result<_>>()?;
    let jobs = jobs.max(1);
    let mut out = Vec::with_capacity(configs.len());
    for chunk in configs.chunks(jobs) {
        let results: Vec<Result<MetricSeries>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|c| s.spawn(move || run(c, rounds))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        for (c, r) in chunk.iter().zip(results) {
            out.push((c.params.beta, r?));
        }
    }
    Ok(out)
}
