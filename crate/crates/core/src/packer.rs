//! Pipeline packing inside one analyst's granted share.
//!
//! The analyst first picks as many pipelines as fit at scale 1, then scales
//! the chosen ones up (never below 1) to maximize its utility, and returns
//! whatever is left of the share.

use crate::error::{Error, Result};
use crate::ids::PipelineId;
use crate::workload::{AnalystDemand, ShareVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Feasibility slack on packing comparisons.
pub const PACK_TOL: f64 = 1e-12;
/// Number of equal-cardinality selections compared before the search
/// stops exploring ties.
pub const TIE_CANDIDATES: usize = 4096;

/// One pipeline as seen by the packer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: PipelineId,
    pub gamma: ShareVector,
    /// Utility per unit of scale, `mu_ij * T(t) * l_ij`.
    pub value: f64,
}

/// Packing items of an analyst, in pipeline-id order.
pub fn pack_items(analyst: &AnalystDemand, waiting_coeff: f64) -> Vec<PackItem> {
    analyst
        .pipelines
        .iter()
        .zip(analyst.pipeline_gammas.iter().zip(&analyst.pipeline_mus))
        .map(|(p, (g, mu))| PackItem {
            id: p.pipeline_id.clone(),
            gamma: g.clone(),
            value: mu * waiting_coeff * p.mean_loss(),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    /// Selected pipelines in id order.
    pub selected: Vec<PipelineId>,
    /// Scale of every pipeline: 0 when unselected, at least 1 otherwise.
    pub scales: BTreeMap<PipelineId, f64>,
    /// Per-block share consumed by each selected pipeline.
    pub charges: BTreeMap<PipelineId, ShareVector>,
    pub consumed: ShareVector,
    pub returned: ShareVector,
    /// Packed utility `sum_j value_j * x_j`.
    pub utility: f64,
}

impl PackingResult {
    /// Sum of the selected scales.
    pub fn units(&self) -> f64 {
        self.scales.values().fold(0.0, |acc, s| acc + s)
    }

    /// Nothing selected, the whole grant returned.
    pub fn empty(items: &[PackItem], granted: &ShareVector) -> Self {
        Self {
            selected: Vec::new(),
            scales: items.iter().map(|i| (i.id.clone(), 0.0)).collect(),
            charges: BTreeMap::new(),
            consumed: granted.keys().map(|k| (k.clone(), 0.0)).collect(),
            returned: granted.clone(),
            utility: 0.0,
        }
    }
}

fn dominates(demand: &ShareVector, granted: &ShareVector) -> bool {
    let mut strict = false;
    for k in demand.keys().chain(granted.keys()) {
        let d = demand.get(k).copied().unwrap_or(0.0);
        let g = granted.get(k).copied().unwrap_or(0.0);
        if d < g - PACK_TOL {
            return false;
        }
        if d > g + PACK_TOL {
            strict = true;
        }
    }
    strict
}

/// True when the analyst's smallest pipeline Pareto-dominates the grant,
/// so no pipeline can run and everything is returned.
pub fn pareto_return_check(analyst: &AnalystDemand, granted: &ShareVector) -> bool {
    let smallest = analyst
        .pipeline_mus
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j);
    match smallest {
        Some(j) => dominates(&analyst.pipeline_gammas[j], granted),
        None => true,
    }
}

fn fits(items: &[PackItem], chosen: &[usize], granted: &ShareVector) -> bool {
    let mut load = ShareVector::new();
    for &j in chosen {
        for (k, g) in &items[j].gamma {
            *load.entry(k.clone()).or_insert(0.0) += g;
        }
    }
    load.iter()
        .all(|(k, l)| *l <= granted.get(k).copied().unwrap_or(0.0) + PACK_TOL)
}

struct Search<'a> {
    items: &'a [PackItem],
    granted: &'a ShareVector,
    blocks: Vec<crate::ids::BlockId>,
    best_count: usize,
    best: Option<(Vec<usize>, f64)>,
    ties: usize,
}

impl Search<'_> {
    /// Upper bound on how many of `items[from..]` still fit, one block at a time.
    fn bound(&self, from: usize, remaining: &[f64]) -> usize {
        let rest = self.items.len() - from;
        let mut bound = rest;
        for (b, k) in self.blocks.iter().enumerate() {
            let mut need: Vec<f64> = self.items[from..]
                .iter()
                .filter_map(|i| i.gamma.get(k).copied())
                .filter(|g| *g > 0.0)
                .collect();
            let free = rest - need.len();
            need.sort_by(f64::total_cmp);
            let mut cap = remaining[b] + PACK_TOL;
            let mut count = 0;
            for g in need {
                if g > cap {
                    break;
                }
                cap -= g;
                count += 1;
            }
            bound = bound.min(free + count);
        }
        bound
    }

    fn offer(&mut self, chosen: &[usize]) -> Result<()> {
        if chosen.len() < self.best_count {
            return Ok(());
        }
        if chosen.len() > self.best_count {
            self.best_count = chosen.len();
            self.best = None;
            self.ties = 0;
        }
        self.ties += 1;
        let value = lp_value(self.items, chosen, self.granted)?;
        let better = match &self.best {
            None => true,
            Some((ids, v)) => {
                value > v + PACK_TOL || ((value - v).abs() <= PACK_TOL && chosen < ids.as_slice())
            }
        };
        if better {
            self.best = Some((chosen.to_vec(), value));
        }
        Ok(())
    }

    fn dfs(&mut self, from: usize, chosen: &mut Vec<usize>, remaining: &mut [f64]) -> Result<()> {
        if from == self.items.len() {
            return self.offer(chosen);
        }
        let bound = chosen.len() + self.bound(from, remaining);
        if bound < self.best_count || (bound == self.best_count && self.ties >= TIE_CANDIDATES) {
            return Ok(());
        }
        let item = &self.items[from];
        let idx: Vec<(usize, f64)> = self
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(b, k)| item.gamma.get(k).map(|g| (b, *g)))
            .collect();
        if idx.iter().all(|(b, g)| *g <= remaining[*b] + PACK_TOL) {
            idx.iter().for_each(|(b, g)| remaining[*b] -= g);
            chosen.push(from);
            self.dfs(from + 1, chosen, remaining)?;
            chosen.pop();
            idx.iter().for_each(|(b, g)| remaining[*b] += g);
        }
        self.dfs(from + 1, chosen, remaining)
    }
}

/// Largest set of pipelines that fit the grant at scale 1. Ties go to the
/// higher packed utility, then to the lexicographically smallest id list.
pub fn max_pipeline_count(items: &[PackItem], granted: &ShareVector) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|a, b| items[*a].id.cmp(&items[*b].id));
    let sorted: Vec<PackItem> = order.iter().map(|&j| items[j].clone()).collect();
    let mut blocks: Vec<_> = sorted.iter().flat_map(|i| i.gamma.keys().cloned()).collect();
    blocks.sort();
    blocks.dedup();
    let mut remaining: Vec<f64> = blocks
        .iter()
        .map(|k| granted.get(k).copied().unwrap_or(0.0))
        .collect();
    let mut search = Search {
        items: &sorted,
        granted,
        blocks,
        best_count: 0,
        best: None,
        ties: 0,
    };
    search.dfs(0, &mut Vec::new(), &mut remaining)?;
    Ok(search
        .best
        .map(|(chosen, _)| chosen.into_iter().map(|j| order[j]).collect())
        .unwrap_or_default())
}

/// Optimal scales of the chosen pipelines.
fn lp_scales(items: &[PackItem], chi: &[usize], granted: &ShareVector) -> Result<Vec<f64>> {
    if !fits(items, chi, granted) {
        return Err(Error::InfeasibleSelection(
            chi.iter().map(|&j| items[j].id.clone()).collect(),
        ));
    }
    if chi.is_empty() {
        return Ok(Vec::new());
    }
    if let [j] = chi {
        let scale = items[*j]
            .gamma
            .iter()
            .filter(|(_, g)| **g > 0.0)
            .map(|(k, g)| granted.get(k).copied().unwrap_or(0.0) / g)
            .fold(f64::INFINITY, f64::min);
        return Ok(vec![scale.max(1.0)]);
    }
    let mut blocks: Vec<_> = chi.iter().flat_map(|&j| items[j].gamma.keys().cloned()).collect();
    blocks.sort();
    blocks.dedup();
    let a: Vec<Vec<f64>> = blocks
        .iter()
        .map(|k| chi.iter().map(|&j| items[j].gamma.get(k).copied().unwrap_or(0.0)).collect())
        .collect();
    let b: Vec<f64> = blocks
        .iter()
        .zip(&a)
        .map(|(k, row)| (granted.get(k).copied().unwrap_or(0.0) - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let c: Vec<f64> = chi.iter().map(|&j| items[j].value).collect();
    let y = simplex_max(&c, &a, &b);
    Ok(y.into_iter().map(|v| 1.0 + v.max(0.0)).collect())
}

fn lp_value(items: &[PackItem], chi: &[usize], granted: &ShareVector) -> Result<f64> {
    let x = lp_scales(items, chi, granted)?;
    Ok(chi.iter().zip(&x).map(|(&j, x)| items[j].value * x).sum())
}

/// Maximizes `c.y` subject to `A y <= b`, `y >= 0` with `b >= 0`, using a
/// dense tableau and Bland's rule. The problem must be bounded.
pub fn simplex_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = c.len();
    let m = b.len();
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for r in 0..m {
        t[r][..n].copy_from_slice(&a[r]);
        t[r][n + r] = 1.0;
        t[r][width - 1] = b[r];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    const EPS: f64 = 1e-12;
    for _ in 0..10_000 {
        let Some(enter) = (0..n + m).find(|&j| t[m][j] < -EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if t[r][enter] > EPS {
                let ratio = t[r][width - 1] / t[r][enter];
                leave = match leave {
                    Some((lr, best))
                        if ratio > best + EPS
                            || ((ratio - best).abs() <= EPS && basis[r] > basis[lr]) =>
                    {
                        Some((lr, best))
                    }
                    _ => Some((r, ratio)),
                };
            }
        }
        let Some((pr, _)) = leave else {
            break;
        };
        let pivot = t[pr][enter];
        t[pr].iter_mut().for_each(|v| *v /= pivot);
        let prow = t[pr].clone();
        for (r, row) in t.iter_mut().enumerate() {
            if r != pr {
                let f = row[enter];
                if f != 0.0 {
                    row.iter_mut().zip(&prow).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        basis[pr] = enter;
    }
    let mut y = vec![0.0; n];
    for (r, &v) in basis.iter().enumerate() {
        if v < n {
            y[v] = t[r][width - 1];
        }
    }
    y
}

/// Scales the chosen pipelines to maximize packed utility within the grant.
pub fn maximize_packed_utility(
    items: &[PackItem],
    chi: &[usize],
    granted: &ShareVector,
) -> Result<PackingResult> {
    let mut chi = chi.to_vec();
    chi.sort_by(|a, b| items[*a].id.cmp(&items[*b].id));
    let x = lp_scales(items, &chi, granted)?;
    let mut result = PackingResult::empty(items, granted);
    for (&j, &scale) in chi.iter().zip(&x) {
        let item = &items[j];
        let charge: ShareVector = item.gamma.iter().map(|(k, g)| (k.clone(), g * scale)).collect();
        for (k, v) in &charge {
            *result.consumed.entry(k.clone()).or_insert(0.0) += v;
        }
        result.selected.push(item.id.clone());
        result.scales.insert(item.id.clone(), scale);
        result.charges.insert(item.id.clone(), charge);
        result.utility += item.value * scale;
    }
    result.returned = compute_returns(granted, &result)?;
    Ok(result)
}

/// Unused part of the grant on each block.
pub fn compute_returns(granted: &ShareVector, result: &PackingResult) -> Result<ShareVector> {
    let mut returned = ShareVector::new();
    for (k, c) in &result.consumed {
        let g = granted.get(k).copied().unwrap_or(0.0);
        let r = g - c;
        if r < -PACK_TOL {
            return Err(Error::AccountingError(format!(
                "block {k}: consumed {c} exceeds grant {g}"
            )));
        }
        returned.insert(k.clone(), r.max(0.0));
    }
    for (k, g) in granted {
        returned.entry(k.clone()).or_insert(*g);
    }
    Ok(returned)
}

/// Full per-analyst packing: return check, selection, scaling, returns.
pub fn pack_analyst(
    analyst: &AnalystDemand,
    granted: &ShareVector,
    waiting_coeff: f64,
) -> Result<PackingResult> {
    let items = pack_items(analyst, waiting_coeff);
    if pareto_return_check(analyst, granted) {
        return Ok(PackingResult::empty(&items, granted));
    }
    let chi = max_pipeline_count(&items, granted)?;
    maximize_packed_utility(&items, &chi, granted)
}
