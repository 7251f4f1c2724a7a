//! Pipelines, analysts and their normalized privacy demands.
//!
//! A pipeline demands an absolute epsilon on each block of its window. Demands
//! are normalized against the block's total budget, so a fresh block has
//! capacity 1 in normalized units.

use crate::error::{Error, Result};
use crate::ids::{AnalystId, BlockId, DeviceId, PipelineId};
use crate::ledger::{DeviceProfile, Ledger};
use crate::rng::{substream, Stream};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sparse per-block vector of normalized shares.
pub type ShareVector = BTreeMap<BlockId, f64>;

/// Budget lookup for live (non-retired) blocks.
pub trait BlockBudgets {
    fn live_budget(&self, block: &BlockId) -> Option<f64>;
}

impl BlockBudgets for Ledger {
    fn live_budget(&self, block: &BlockId) -> Option<f64> {
        Ledger::live_budget(self, block)
    }
}

impl BlockBudgets for BTreeMap<BlockId, f64> {
    fn live_budget(&self, block: &BlockId) -> Option<f64> {
        self.get(block).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineDemand {
    pub analyst_id: AnalystId,
    pub pipeline_id: PipelineId,
    /// Absolute epsilon demanded on each block.
    pub demands: BTreeMap<BlockId, f64>,
    pub arrival_round: u64,
    /// Matching-degree weight of each demanded block, in (0, 1].
    pub losses: BTreeMap<BlockId, f64>,
}

impl PipelineDemand {
    /// Builds a pipeline whose blocks all carry loss weight 1.
    pub fn new(
        analyst_id: AnalystId,
        pipeline_id: PipelineId,
        demands: BTreeMap<BlockId, f64>,
        arrival_round: u64,
    ) -> Self {
        let losses = demands.keys().map(|k| (k.clone(), 1.0)).collect();
        Self {
            analyst_id,
            pipeline_id,
            demands,
            arrival_round,
            losses,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.demands.is_empty() {
            return Err(Error::EmptyDemand(format!(
                "pipeline {} demands no block",
                self.pipeline_id
            )));
        }
        if let Some((block, eps)) = self
            .demands
            .iter()
            .find(|(_, &eps)| !(eps.is_finite() && eps > 0.0))
        {
            return Err(Error::InvalidParams(format!(
                "pipeline {} demands {eps} on {block}",
                self.pipeline_id
            )));
        }
        if !self.losses.keys().eq(self.demands.keys()) {
            return Err(Error::InvalidParams(format!(
                "pipeline {} losses are not keyed like its demands",
                self.pipeline_id
            )));
        }
        if let Some(l) = self
            .losses
            .values()
            .find(|&&l| !(l > 0.0 && l <= 1.0))
        {
            return Err(Error::InvalidParams(format!(
                "pipeline {} loss weight {l} outside (0, 1]",
                self.pipeline_id
            )));
        }
        Ok(())
    }

    /// Per-pipeline loss: mean of its per-block losses.
    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            return 1.0;
        }
        self.losses.values().sum::<f64>() / self.losses.len() as f64
    }

    pub fn depends_on_live_blocks(&self, budgets: &impl BlockBudgets) -> bool {
        self.demands.keys().all(|k| budgets.live_budget(k).is_some())
    }
}

/// Demanded epsilon over total block budget, per block.
pub fn normalize_demand(pipeline: &PipelineDemand, budgets: &impl BlockBudgets) -> Result<ShareVector> {
    pipeline
        .demands
        .iter()
        .map(|(block, &eps)| {
            let budget = budgets
                .live_budget(block)
                .filter(|&b| b > 0.0)
                .ok_or_else(|| Error::UnknownBlock(block.clone()))?;
            Ok((block.clone(), eps / budget))
        })
        .collect()
}

/// Largest normalized demand of a pipeline.
pub fn pipeline_max_share(gamma: &ShareVector) -> Result<f64> {
    max_share(gamma.values().copied())
}

pub(crate) fn max_share(values: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mu = values.into_iter().fold(0.0_f64, f64::max);
    if mu > 0.0 {
        Ok(mu)
    } else {
        Err(Error::EmptyDemand("all normalized demands are zero".into()))
    }
}

/// Average of per-pipeline losses weighted by their maximum shares.
pub fn weighted_loss(mus: &[f64], losses: &[f64]) -> Result<f64> {
    if mus.len() != losses.len() {
        return Err(Error::InvalidParams(format!(
            "{} shares for {} losses",
            mus.len(),
            losses.len()
        )));
    }
    let total: f64 = mus.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDemand("maximum shares sum to zero".into()));
    }
    Ok(mus.iter().zip(losses).map(|(m, l)| m / total * l).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalystDemand {
    pub analyst_id: AnalystId,
    /// Per-block sum of the pipelines' normalized demands.
    pub gamma: ShareVector,
    pub mu: f64,
    pub waiting_time: u64,
    pub loss: f64,
    /// Pipelines sorted by id.
    pub pipelines: Vec<PipelineDemand>,
    /// Normalized demand of each pipeline, aligned with `pipelines`.
    pub pipeline_gammas: Vec<ShareVector>,
    pub pipeline_mus: Vec<f64>,
}

impl AnalystDemand {
    pub fn pipeline_index(&self, id: &PipelineId) -> Option<usize> {
        self.pipelines.iter().position(|p| &p.pipeline_id == id)
    }
}

/// Aggregates one analyst's pipelines into a single demand at `round`.
pub fn aggregate_analyst(
    pipelines: &[PipelineDemand],
    round: u64,
    budgets: &impl BlockBudgets,
) -> Result<AnalystDemand> {
    let first = pipelines
        .first()
        .ok_or_else(|| Error::EmptyDemand("analyst has no pipelines".into()))?;
    if let Some(other) = pipelines.iter().find(|p| p.analyst_id != first.analyst_id) {
        return Err(Error::MixedOwnership {
            expected: first.analyst_id.clone(),
            found: other.analyst_id.clone(),
        });
    }
    let mut sorted = pipelines.to_vec();
    sorted.sort_by(|a, b| a.pipeline_id.cmp(&b.pipeline_id));

    let mut gamma = ShareVector::new();
    let mut pipeline_gammas = Vec::with_capacity(sorted.len());
    let mut pipeline_mus = Vec::with_capacity(sorted.len());
    for p in &sorted {
        p.validate()?;
        let g = normalize_demand(p, budgets)?;
        for (k, v) in &g {
            *gamma.entry(k.clone()).or_insert(0.0) += v;
        }
        pipeline_mus.push(pipeline_max_share(&g)?);
        pipeline_gammas.push(g);
    }
    let losses: Vec<f64> = sorted.iter().map(PipelineDemand::mean_loss).collect();
    let loss = weighted_loss(&pipeline_mus, &losses)?;
    let earliest = sorted.iter().map(|p| p.arrival_round).min().unwrap_or(round);
    Ok(AnalystDemand {
        analyst_id: first.analyst_id.clone(),
        mu: pipeline_max_share(&gamma)?,
        gamma,
        waiting_time: round.saturating_sub(earliest),
        loss,
        pipelines: sorted,
        pipeline_gammas,
        pipeline_mus,
    })
}

/// Synthetic workload parameters. Defaults are the desk-scale setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub device_count: u32,
    pub budget_low: f64,
    pub budget_high: f64,
    pub blocks_per_round: u32,
    /// Mean number of analyst batches arriving per round.
    pub arrival_rate: f64,
    pub analysts_per_arrival: u32,
    pub pipelines_per_analyst: u32,
    pub mice_fraction: f64,
    pub mice_eps_range: (f64, f64),
    pub elephant_eps_range: (f64, f64),
    pub depth_long: u32,
    pub depth_short: u32,
    pub depth_long_prob: f64,
    pub full_device_prob: f64,
    pub partial_device_fraction: f64,
    /// Per-block matching-degree interval; every loss is 1 when unset.
    pub loss_range: Option<(f64, f64)>,
    pub rdp_order: Option<f64>,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            device_count: 10,
            budget_low: 1.0,
            budget_high: 1.5,
            blocks_per_round: 2,
            arrival_rate: 1.0,
            analysts_per_arrival: 3,
            pipelines_per_analyst: 5,
            mice_fraction: 0.75,
            mice_eps_range: (0.005, 0.015),
            elephant_eps_range: (0.095, 0.105),
            depth_long: 10,
            depth_short: 1,
            depth_long_prob: 0.25,
            full_device_prob: 0.5,
            partial_device_fraction: 0.2,
            loss_range: None,
            rdp_order: None,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    /// The 100-device, 6 analysts x 25 pipelines setup.
    pub fn full_scale() -> Self {
        Self {
            device_count: 100,
            analysts_per_arrival: 6,
            pipelines_per_analyst: 25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidConfig(format!("{field}: {why}")));
        for (field, p) in [
            ("mice_fraction", self.mice_fraction),
            ("depth_long_prob", self.depth_long_prob),
            ("full_device_prob", self.full_device_prob),
            ("partial_device_fraction", self.partial_device_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        for (field, (lo, hi)) in [
            ("mice_eps_range", self.mice_eps_range),
            ("elephant_eps_range", self.elephant_eps_range),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return bad(field, "needs 0 < low < high");
            }
        }
        if !(self.budget_low > 0.0 && self.budget_high > self.budget_low && self.budget_high.is_finite()) {
            return bad("budget_low/budget_high", "needs 0 < low < high");
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate", "must be finite and non-negative");
        }
        if self.depth_long == 0 || self.depth_short == 0 {
            return bad("depth_long/depth_short", "windows need at least one block");
        }
        if let Some((lo, hi)) = self.loss_range {
            if !(lo > 0.0 && hi > lo && hi <= 1.0) {
                return bad("loss_range", "needs 0 < low < high <= 1");
            }
        }
        Ok(())
    }

    pub fn device_id(&self, index: u32) -> DeviceId {
        DeviceId::new(format!("d{index:03}"))
    }

    pub fn block_id(&self, device: u32, round: u64, slot: u32) -> BlockId {
        BlockId::new(format!("d{device:03}-r{round:05}-{slot}"))
    }

    /// Device profiles; each budget is drawn once from the device stream.
    pub fn devices(&self) -> Vec<DeviceProfile> {
        let mut rng = substream(self.seed, Stream::Devices, 0);
        (0..self.device_count)
            .map(|d| DeviceProfile {
                device_id: self.device_id(d),
                global_budget: rng.random_range(self.budget_low..self.budget_high),
                blocks_per_round: self.blocks_per_round,
            })
            .collect()
    }

    /// The `depth` most recent blocks of a device as of `round`, newest first.
    fn latest_blocks(&self, device: u32, round: u64, depth: u32) -> Vec<BlockId> {
        let per_round = u64::from(self.blocks_per_round);
        let total = per_round * (round + 1);
        (0..u64::from(depth).min(total))
            .map(|back| {
                let seq = total - 1 - back;
                self.block_id(device, seq / per_round, (seq % per_round) as u32)
            })
            .collect()
    }
}

/// Blocks and analysts produced in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundWorkload {
    pub blocks: Vec<(DeviceId, BlockId)>,
    /// One entry per arriving analyst, holding its pipelines.
    pub analysts: Vec<Vec<PipelineDemand>>,
}

/// Generates the blocks and analyst arrivals of `round`.
///
/// The result depends only on `(config, round)`; the seed lives in the config.
pub fn generate_workload(config: &WorkloadConfig, round: u64) -> RoundWorkload {
    let blocks = (0..config.device_count)
        .flat_map(|d| {
            (0..config.blocks_per_round)
                .map(move |slot| (config.device_id(d), config.block_id(d, round, slot)))
        })
        .collect();

    let mut arrivals_rng = substream(config.seed, Stream::Arrivals, round);
    let batches = if config.arrival_rate > 0.0 {
        Poisson::new(config.arrival_rate)
            .map(|p| p.sample(&mut arrivals_rng) as u64)
            .unwrap_or(0)
    } else {
        0
    };

    let mut rng = substream(config.seed, Stream::Workload, round);
    let mut loss_rng = substream(config.seed, Stream::Losses, round);
    let mut analysts = Vec::new();
    if config.device_count == 0 || config.blocks_per_round == 0 {
        return RoundWorkload { blocks, analysts };
    }
    for batch in 0..batches {
        for a in 0..config.analysts_per_arrival {
            let analyst = AnalystId::new(format!("a{round:05}-{batch}-{a}"));
            let devices: Vec<u32> = if rng.random_bool(config.full_device_prob) {
                (0..config.device_count).collect()
            } else {
                let n = ((f64::from(config.device_count) * config.partial_device_fraction).round()
                    as usize)
                    .clamp(1, config.device_count as usize);
                let mut picked: Vec<u32> = sample(&mut rng, config.device_count as usize, n)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                picked.sort_unstable();
                picked
            };
            let pipelines = (0..config.pipelines_per_analyst)
                .map(|j| {
                    let range = if rng.random_bool(config.mice_fraction) {
                        config.mice_eps_range
                    } else {
                        config.elephant_eps_range
                    };
                    let eps = rng.random_range(range.0..range.1);
                    let depth = if rng.random_bool(config.depth_long_prob) {
                        config.depth_long
                    } else {
                        config.depth_short
                    };
                    let demands: BTreeMap<BlockId, f64> = devices
                        .iter()
                        .flat_map(|&d| config.latest_blocks(d, round, depth))
                        .map(|b| (b, eps))
                        .collect();
                    let losses = demands
                        .keys()
                        .map(|b| {
                            let l = match config.loss_range {
                                Some((lo, hi)) => loss_rng.random_range(lo..=hi),
                                None => 1.0,
                            };
                            (b.clone(), l)
                        })
                        .collect();
                    PipelineDemand {
                        analyst_id: analyst.clone(),
                        pipeline_id: PipelineId::new(format!("{analyst}-p{j:02}")),
                        demands,
                        arrival_round: round,
                        losses,
                    }
                })
                .collect();
            analysts.push(pipelines);
        }
    }
    RoundWorkload { blocks, analysts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub id: BlockId,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub id: PipelineId,
    #[serde(default)]
    pub arrival_round: u64,
    pub demands: BTreeMap<BlockId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub losses: BTreeMap<BlockId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalystSpec {
    pub id: AnalystId,
    pub pipelines: Vec<PipelineSpec>,
}

/// Demand file: blocks with budgets plus analysts and their pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFile {
    pub blocks: Vec<BlockSpec>,
    pub analysts: Vec<AnalystSpec>,
}

impl DemandFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DemandFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            if !(b.budget.is_finite() && b.budget > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "block {}: budget must be positive",
                    b.id
                )));
            }
        }
        let budgets = self.budgets();
        for p in self.pipelines().into_iter().flatten() {
            p.validate()?;
            if let Some(k) = p.demands.keys().find(|k| !budgets.contains_key(*k)) {
                return Err(Error::UnknownBlock(k.clone()));
            }
        }
        Ok(())
    }

    pub fn budgets(&self) -> BTreeMap<BlockId, f64> {
        self.blocks.iter().map(|b| (b.id.clone(), b.budget)).collect()
    }

    /// Pipelines grouped per analyst, with missing losses set to 1.
    pub fn pipelines(&self) -> Vec<Vec<PipelineDemand>> {
        self.analysts
            .iter()
            .map(|a| {
                a.pipelines
                    .iter()
                    .map(|p| {
                        let losses = p
                            .demands
                            .keys()
                            .map(|k| (k.clone(), p.losses.get(k).copied().unwrap_or(1.0)))
                            .collect();
                        PipelineDemand {
                            analyst_id: a.id.clone(),
                            pipeline_id: p.id.clone(),
                            demands: p.demands.clone(),
                            arrival_round: p.arrival_round,
                            losses,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// A ledger holding the file's blocks, one device per block.
    pub fn ledger(&self) -> Ledger {
        let mut ledger = Ledger::new(None);
        for b in &self.blocks {
            let device = DeviceId::new(format!("dev-{}", b.id));
            ledger.add_device(DeviceProfile {
                device_id: device.clone(),
                global_budget: b.budget,
                blocks_per_round: 0,
            });
            ledger
                .add_block(&device, b.id.clone(), 0)
                .expect("device registered above");
        }
        ledger
    }

    pub fn aggregate(&self, round: u64) -> Result<Vec<AnalystDemand>> {
        let budgets = self.budgets();
        self.pipelines()
            .iter()
            .map(|p| aggregate_analyst(p, round, &budgets))
            .collect()
    }
}

/// Two blocks of budget 1.0 shared by Alice (P1, P2) and Bob (P3, P4).
pub fn fig2_fixture() -> DemandFile {
    let pipeline = |id: &str, b1: f64, b2: f64| PipelineSpec {
        id: id.into(),
        arrival_round: 0,
        demands: [("B1".into(), b1), ("B2".into(), b2)].into_iter().collect(),
        losses: [("B1".into(), 1.0), ("B2".into(), 1.0)].into_iter().collect(),
    };
    DemandFile {
        blocks: vec![
            BlockSpec { id: "B1".into(), budget: 1.0 },
            BlockSpec { id: "B2".into(), budget: 1.0 },
        ],
        analysts: vec![
            AnalystSpec {
                id: "Alice".into(),
                pipelines: vec![pipeline("P1", 0.5, 0.3), pipeline("P2", 0.3, 0.5)],
            },
            AnalystSpec {
                id: "Bob".into(),
                pipelines: vec![pipeline("P3", 0.4, 0.3), pipeline("P4", 0.3, 0.3)],
            },
        ],
    }
}
