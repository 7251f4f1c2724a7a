//! Analyst efficiency, dominant efficiency and fairness, and the platform
//! utility that trades them off.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fairness preference `beta`, efficiency preference `lambda` and the
/// waiting-time decay `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    pub beta: f64,
    pub lambda: f64,
    pub rho: f64,
}

impl FairnessParams {
    /// Validates the parameters; `lambda` defaults to `|1 - beta| / beta`,
    /// where the platform utility reduces to alpha-fairness.
    pub fn new(beta: f64, lambda: Option<f64>, rho: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta must be positive, got {beta}")));
        }
        if beta == 1.0 {
            return Err(Error::InvalidParams(
                "beta = 1 is not supported (sign of the fairness measure flips there)".into(),
            ));
        }
        let lambda = lambda.unwrap_or_else(|| alpha_fair_lambda(beta));
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::InvalidParams(format!("rho must be >= 0, got {rho}")));
        }
        Ok(Self { beta, lambda, rho })
    }

    pub fn alpha_fair(beta: f64) -> Result<Self> {
        Self::new(beta, None, 0.0)
    }

    /// `sgn(1 - beta)`.
    pub fn sign(&self) -> f64 {
        if self.beta < 1.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Whether `lambda == |1 - beta| / beta`.
    pub fn is_alpha_fair(&self) -> bool {
        (self.lambda - alpha_fair_lambda(self.beta)).abs() <= 1e-12 * (1.0 + self.lambda)
    }

    /// Weight of `log(sum U)` left over once the fairness term is expanded;
    /// zero in the alpha-fair regime.
    pub fn efficiency_excess(&self) -> f64 {
        self.lambda - alpha_fair_lambda(self.beta)
    }
}

pub fn alpha_fair_lambda(beta: f64) -> f64 {
    (1.0 - beta).abs() / beta
}

/// `T(t) = exp(-rho * t)`.
pub fn waiting_coeff(t: f64, rho: f64) -> f64 {
    (-rho * t).exp()
}

pub fn analyst_efficiency(mu: f64, x: f64, waiting: f64, loss: f64) -> f64 {
    mu * x * waiting * loss
}

pub fn dominant_efficiency(utilities: &[f64]) -> f64 {
    utilities.iter().fold(0.0, |acc, u| acc + u)
}

fn check_positive(utilities: &[f64]) -> Result<()> {
    match utilities.iter().find(|&&u| !(u > 0.0 && u.is_finite())) {
        Some(&u) => Err(Error::DegenerateShare(u)),
        None if utilities.is_empty() => Err(Error::DegenerateShare(0.0)),
        None => Ok(()),
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta != 1.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("beta must be positive and != 1, got {beta}")))
    }
}

/// Signed generalized-mean fairness of the utility shares.
pub fn dominant_fairness(utilities: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_positive(utilities)?;
    let total: f64 = utilities.iter().sum();
    let sum: f64 = utilities.iter().map(|u| (u / total).powf(1.0 - beta)).sum();
    let sign = if beta < 1.0 { 1.0 } else { -1.0 };
    Ok(sign * sum.powf(1.0 / beta))
}

/// Fairness over the analysts with positive utility. Returns `None` when no
/// analyst is active.
pub fn active_fairness(utilities: &[f64], beta: f64) -> Result<Option<f64>> {
    let active: Vec<f64> = utilities.iter().copied().filter(|&u| u > 0.0).collect();
    if active.is_empty() {
        return Ok(None);
    }
    dominant_fairness(&active, beta).map(Some)
}

/// Log-transformed platform utility `l(f) + lambda * log(sum U)` with
/// `l(y) = sgn(y) log|y|`. Concave in the utilities whenever
/// `lambda >= |1 - beta| / beta`.
pub fn log_platform_utility(utilities: &[f64], params: &FairnessParams) -> Result<f64> {
    let f = dominant_fairness(utilities, params.beta)?;
    let total: f64 = utilities.iter().sum();
    Ok(f.signum() * f.abs().ln() + params.lambda * total.ln())
}

/// Platform utility combining fairness and efficiency.
///
/// For `beta < 1` this is `f * S^lambda`; for `beta > 1`, where `f < 0`, the
/// efficiency factor enters as `f * S^-lambda` so the utility still grows
/// with total efficiency. Both equal `sgn(1-beta) (sum U^(1-beta))^(1/beta)`
/// at `lambda = |1 - beta| / beta`.
pub fn platform_utility(utilities: &[f64], params: &FairnessParams) -> Result<f64> {
    let f = dominant_fairness(utilities, params.beta)?;
    let total: f64 = utilities.iter().sum();
    Ok(f * total.powf(params.sign() * params.lambda))
}

/// Alpha-fair objective `sum U^(1-beta) / (1-beta)`.
pub fn alpha_objective(utilities: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_positive(utilities)?;
    Ok(utilities.iter().map(|u| u.powf(1.0 - beta)).sum::<f64>() / (1.0 - beta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub round_efficiency: f64,
    /// Zero when no analyst received anything (`fairness_active == false`).
    pub round_fairness: f64,
    pub fairness_active: bool,
    pub cumulative_efficiency: f64,
    pub cumulative_fairness: f64,
    pub pipelines_allocated: usize,
    pub pipeline_units: f64,
    pub blocks_retired: usize,
}

/// Per-round outcome before prefix sums are applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutcome {
    pub utilities: Vec<f64>,
    pub pipelines_allocated: usize,
    pub pipeline_units: f64,
    pub blocks_retired: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub rounds: Vec<RoundMetrics>,
}

impl MetricSeries {
    /// Appends a round, accumulating the cumulative columns.
    pub fn push(&mut self, round: u64, outcome: &RoundOutcome, beta: f64) -> Result<&RoundMetrics> {
        let efficiency = dominant_efficiency(&outcome.utilities);
        let fairness = active_fairness(&outcome.utilities, beta)?;
        let (cum_eff, cum_fair) = self
            .rounds
            .last()
            .map_or((0.0, 0.0), |m| (m.cumulative_efficiency, m.cumulative_fairness));
        let round_fairness = fairness.unwrap_or(0.0);
        self.rounds.push(RoundMetrics {
            round,
            round_efficiency: efficiency,
            round_fairness,
            fairness_active: fairness.is_some(),
            cumulative_efficiency: cum_eff + efficiency,
            cumulative_fairness: cum_fair + round_fairness,
            pipelines_allocated: outcome.pipelines_allocated,
            pipeline_units: outcome.pipeline_units,
            blocks_retired: outcome.blocks_retired,
        });
        Ok(self.rounds.last().expect("just pushed"))
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Whether the cumulative columns are the exact prefix sums.
    pub fn prefix_sums_hold(&self) -> bool {
        let mut eff = 0.0;
        let mut fair = 0.0;
        self.rounds.iter().all(|m| {
            eff += m.round_efficiency;
            fair += m.round_fairness;
            eff == m.cumulative_efficiency && fair == m.cumulative_fairness
        })
    }
}
