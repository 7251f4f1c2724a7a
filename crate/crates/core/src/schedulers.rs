//! Round schedulers: DPBalance and the DPF, DPK and FCFS baselines.
//!
//! Every scheduler sees the same inputs: the ledger, the pending pipelines
//! grouped by analyst, the current round and the fairness parameters. A
//! pipeline is eligible only when all of its blocks are live; the others
//! stay pending.

use crate::error::{Error, Result};
use crate::ids::{AnalystId, BlockId, PipelineId};
use crate::ledger::Ledger;
use crate::metrics::{waiting_coeff, FairnessParams};
use crate::packer::{pack_analyst, pack_items, PackingResult, PACK_TOL};
use crate::solver::solve_subproblem1;
use crate::workload::{aggregate_analyst, AnalystDemand, DemandFile, PipelineDemand, ShareVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Pending pipelines keyed by analyst.
pub type Pending = BTreeMap<AnalystId, Vec<PipelineDemand>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    DpBalance,
    Dpf,
    Dpk,
    Fcfs,
}

impl Scheduler {
    pub const ALL: [Scheduler; 4] = [Scheduler::DpBalance, Scheduler::Dpf, Scheduler::Dpk, Scheduler::Fcfs];

    pub fn name(self) -> &'static str {
        match self {
            Scheduler::DpBalance => "dpbalance",
            Scheduler::Dpf => "dpf",
            Scheduler::Dpk => "dpk",
            Scheduler::Fcfs => "fcfs",
        }
    }

    pub fn schedule(
        self,
        ledger: &Ledger,
        pending: &Pending,
        round: u64,
        params: &FairnessParams,
    ) -> Result<AllocationPlan> {
        match self {
            Scheduler::DpBalance => dpbalance_round(ledger, pending, round, params),
            Scheduler::Dpf => dpf_round(ledger, pending, round, params),
            Scheduler::Dpk => dpk_round(ledger, pending, round, params),
            Scheduler::Fcfs => fcfs_round(ledger, pending, round, params),
        }
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheduler::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheduler '{s}'")))
    }
}

/// What one analyst received in a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalystGrant {
    /// Share handed to the analyst by the allocation step.
    pub granted: ShareVector,
    /// `granted` plus what earlier analysts of the round returned on the
    /// same blocks; packing runs against this.
    pub available: ShareVector,
    pub packing: PackingResult,
    /// Realized utility `sum_j mu_ij * x_ij * T(t_i) * l_ij`.
    pub utility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineGrant {
    pub analyst_id: AnalystId,
    pub scale: f64,
    /// Normalized share consumed on each block.
    pub share: ShareVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub round: u64,
    /// Every analyst with an eligible pipeline, served or not.
    pub per_analyst: BTreeMap<AnalystId, AnalystGrant>,
    pub per_pipeline: BTreeMap<PipelineId, PipelineGrant>,
}

impl AllocationPlan {
    /// Realized utilities in analyst-id order.
    pub fn utilities(&self) -> Vec<f64> {
        self.per_analyst.values().map(|g| g.utility).collect()
    }

    pub fn pipelines_allocated(&self) -> usize {
        self.per_pipeline.len()
    }

    pub fn pipeline_units(&self) -> f64 {
        self.per_pipeline.values().fold(0.0, |acc, p| acc + p.scale)
    }

    /// Total normalized share consumed per block.
    pub fn consumed(&self) -> ShareVector {
        let mut total = ShareVector::new();
        for p in self.per_pipeline.values() {
            for (k, v) in &p.share {
                *total.entry(k.clone()).or_insert(0.0) += v;
            }
        }
        total
    }

    /// Physical epsilon charges `(block, pipeline, eps)` in pipeline order.
    pub fn physical_charges(&self, ledger: &Ledger) -> Result<Vec<(BlockId, PipelineId, f64)>> {
        let mut out = Vec::new();
        for (pid, p) in &self.per_pipeline {
            for (k, share) in &p.share {
                let budget = ledger
                    .block(k)
                    .map(|b| b.budget_eps)
                    .ok_or_else(|| Error::UnknownBlock(k.clone()))?;
                out.push((k.clone(), pid.clone(), share * budget));
            }
        }
        Ok(out)
    }
}

/// Pipelines whose blocks are all live, grouped and aggregated per analyst.
pub fn eligible_analysts(ledger: &Ledger, pending: &Pending, round: u64) -> Result<Vec<AnalystDemand>> {
    let mut out = Vec::new();
    for pipelines in pending.values() {
        let live: Vec<PipelineDemand> = pipelines
            .iter()
            .filter(|p| p.depends_on_live_blocks(ledger))
            .cloned()
            .collect();
        if !live.is_empty() {
            out.push(aggregate_analyst(&live, round, ledger)?);
        }
    }
    Ok(out)
}

/// Remaining capacity of every block some analyst demands.
pub fn capacities(ledger: &Ledger, analysts: &[AnalystDemand]) -> BTreeMap<BlockId, f64> {
    analysts
        .iter()
        .flat_map(|a| a.gamma.keys())
        .map(|k| (k.clone(), ledger.remaining_fraction(k)))
        .collect()
}

fn record(
    plan: &mut AllocationPlan,
    analyst: &AnalystDemand,
    granted: ShareVector,
    available: ShareVector,
    packing: PackingResult,
) {
    for pid in &packing.selected {
        plan.per_pipeline.insert(
            pid.clone(),
            PipelineGrant {
                analyst_id: analyst.analyst_id.clone(),
                scale: packing.scales[pid],
                share: packing.charges[pid].clone(),
            },
        );
    }
    plan.per_analyst.insert(
        analyst.analyst_id.clone(),
        AnalystGrant {
            granted,
            available,
            utility: packing.utility,
            packing,
        },
    );
}

/// DPBalance: split capacity among analysts, then pack each analyst's share.
pub fn dpbalance_round(
    ledger: &Ledger,
    pending: &Pending,
    round: u64,
    params: &FairnessParams,
) -> Result<AllocationPlan> {
    let wrap = |e: Error| Error::Scheduler {
        round,
        source: Box::new(e),
    };
    let analysts = eligible_analysts(ledger, pending, round).map_err(wrap)?;
    let mut plan = AllocationPlan {
        round,
        ..Default::default()
    };
    if analysts.is_empty() {
        return Ok(plan);
    }
    let caps = capacities(ledger, &analysts);
    let allocation = solve_subproblem1(&analysts, params, &caps).map_err(wrap)?;
    // returns stay in a pool that analysts later in id order can pack into
    let mut pool = ShareVector::new();
    for (analyst, granted) in analysts.iter().zip(allocation.shares) {
        let t = waiting_coeff(analyst.waiting_time as f64, params.rho);
        let available: ShareVector = granted
            .iter()
            .map(|(k, g)| (k.clone(), g + pool.remove(k).unwrap_or(0.0)))
            .collect();
        let packing = pack_analyst(analyst, &available, t).map_err(wrap)?;
        for (k, r) in &packing.returned {
            pool.insert(k.clone(), *r);
        }
        record(&mut plan, analyst, granted, available, packing);
    }
    Ok(plan)
}

/// Greedy baseline: grants eligible pipelines at scale 1 in the order given
/// by `key`, skipping the ones that no longer fit.
fn greedy_round<K: PartialOrd>(
    ledger: &Ledger,
    pending: &Pending,
    round: u64,
    params: &FairnessParams,
    key: impl Fn(&ShareVector, f64) -> K,
) -> Result<AllocationPlan> {
    let analysts = eligible_analysts(ledger, pending, round)?;
    let mut remaining = capacities(ledger, &analysts);
    let mut queue = Vec::new();
    for (a, analyst) in analysts.iter().enumerate() {
        for (j, p) in analyst.pipelines.iter().enumerate() {
            let k = key(&analyst.pipeline_gammas[j], analyst.pipeline_mus[j]);
            queue.push((k, p.arrival_round, p.pipeline_id.clone(), a, j));
        }
    }
    queue.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); analysts.len()];
    for (_, _, _, a, j) in queue {
        let gamma = &analysts[a].pipeline_gammas[j];
        if gamma.iter().all(|(k, g)| *g <= remaining[k] + PACK_TOL) {
            for (k, g) in gamma {
                *remaining.get_mut(k).expect("capacity listed") -= g;
            }
            chosen[a].push(j);
        }
    }
    let mut plan = AllocationPlan {
        round,
        ..Default::default()
    };
    for (analyst, picks) in analysts.iter().zip(chosen) {
        let items = pack_items(analyst, waiting_coeff(analyst.waiting_time as f64, params.rho));
        let mut consumed = ShareVector::new();
        for &j in &picks {
            for (k, g) in &items[j].gamma {
                *consumed.entry(k.clone()).or_insert(0.0) += g;
            }
        }
        let mut packing = PackingResult::empty(&items, &consumed);
        for &j in &picks {
            let item = &items[j];
            packing.selected.push(item.id.clone());
            packing.scales.insert(item.id.clone(), 1.0);
            packing.charges.insert(item.id.clone(), item.gamma.clone());
            packing.utility += item.value;
        }
        packing.returned = consumed.keys().map(|k| (k.clone(), 0.0)).collect();
        packing.consumed = consumed.clone();
        record(&mut plan, analyst, consumed.clone(), consumed, packing);
    }
    Ok(plan)
}

/// DPF: smallest dominant share first.
pub fn dpf_round(ledger: &Ledger, pending: &Pending, round: u64, params: &FairnessParams) -> Result<AllocationPlan> {
    greedy_round(ledger, pending, round, params, |_, mu| mu)
}

/// DPK with unit weights: smallest total normalized demand first.
pub fn dpk_round(ledger: &Ledger, pending: &Pending, round: u64, params: &FairnessParams) -> Result<AllocationPlan> {
    greedy_round(ledger, pending, round, params, |g, _| g.values().sum::<f64>())
}

/// FCFS: arrival order.
pub fn fcfs_round(ledger: &Ledger, pending: &Pending, round: u64, params: &FairnessParams) -> Result<AllocationPlan> {
    greedy_round(ledger, pending, round, params, |_, _| ())
}

/// Pending queue of a demand file.
pub fn pending_from(file: &DemandFile) -> Pending {
    file.pipelines()
        .into_iter()
        .filter_map(|p| Some((p.first()?.analyst_id.clone(), p)))
        .collect()
}
