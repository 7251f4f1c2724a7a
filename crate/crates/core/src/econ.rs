//! Empirical checks of the economic properties of the analyst-level
//! allocation: Pareto efficiency, sharing incentive, envy-freeness, weak
//! strategy proofness and the efficiency/fairness tradeoff.
//!
//! Instances are dense [`AllocationProblem`]s. Random instances are drawn
//! from the `Instances` substream of a per-instance seed, so every violation
//! can be regenerated from the seed it reports.

use crate::error::{Error, Result};
use crate::metrics::{active_fairness, dominant_efficiency, FairnessParams};
use crate::rng::{substream, Stream};
use crate::solver::{objective_value, solve_dense, AllocationProblem, SolverOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Tolerance on every oracle inequality.
pub const ORACLE_TOL: f64 = 1e-7;
/// Random dominating perturbations tried by [`check_pareto`].
pub const PARETO_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Seed of the offending instance.
    pub seed: u64,
    pub witness: Vec<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub beta: f64,
    pub lambda: f64,
    pub instances: usize,
    pub violations: Vec<Violation>,
    pub verdict: Verdict,
}

impl PropertyReport {
    pub fn new(property: &str, params: &FairnessParams) -> Self {
        Self {
            property: property.to_string(),
            beta: params.beta,
            lambda: params.lambda,
            instances: 0,
            violations: Vec::new(),
            verdict: Verdict::Holds,
        }
    }

    fn single(property: &str, params: &FairnessParams) -> Self {
        let mut r = Self::new(property, params);
        r.instances = 1;
        r
    }

    fn violate(&mut self, seed: u64, witness: Vec<f64>, detail: String) {
        self.violations.push(Violation {
            seed,
            witness,
            detail,
        });
        self.verdict = Verdict::Violated;
    }

    /// Folds another report of the same property into this one.
    pub fn absorb(&mut self, other: PropertyReport) {
        self.instances += other.instances;
        self.violations.extend(other.violations);
        if !self.violations.is_empty() {
            self.verdict = Verdict::Violated;
        }
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

/// Random instance: demands `U(0.05, 1)`, `mu = max gamma`, unit weights
/// and capacities.
pub fn random_instance(seed: u64, analysts: usize, blocks: usize) -> AllocationProblem {
    let mut rng = substream(seed, Stream::Instances, 0);
    let gamma = (0..analysts)
        .map(|_| (0..blocks).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    AllocationProblem::from_gamma(gamma)
}

/// Random single-block instance whose dominant shares lie on blocks outside
/// the problem: `gamma_i ~ U(0.05, 1)`, `mu_i = gamma_i / U(0.2, 1)`.
pub fn random_single_resource(seed: u64, analysts: usize) -> AllocationProblem {
    let mut rng = substream(seed, Stream::Instances, 0);
    let gamma: Vec<Vec<f64>> = (0..analysts).map(|_| vec![rng.random_range(0.05..1.0)]).collect();
    let mu = gamma.iter().map(|g| g[0] / rng.random_range(0.2..1.0)).collect();
    AllocationProblem {
        gamma,
        mu,
        weight: vec![1.0; analysts],
        capacity: vec![1.0],
    }
}

/// Two analysts on two blocks, `D1 = (1, g)` and `D2 = (0, 1)`.
pub fn asymmetric_instance(g: f64) -> AllocationProblem {
    AllocationProblem::from_gamma(vec![vec![1.0, g], vec![0.0, 1.0]])
}

/// Three analysts on three blocks whose columns of `gamma / mu` all sum to 1.5.
pub fn balanced_square_instance() -> AllocationProblem {
    AllocationProblem::from_gamma(vec![
        vec![1.0, 0.3, 0.2],
        vec![0.4, 1.0, 0.3],
        vec![0.1, 0.2, 1.0],
    ])
}

/// Three analysts on two blocks.
pub fn overloaded_instance() -> AllocationProblem {
    AllocationProblem::from_gamma(vec![vec![1.0, 0.5], vec![0.5, 1.0], vec![1.0, 1.0]])
}

/// Solves an instance with default options.
pub fn allocate(problem: &AllocationProblem, params: &FairnessParams) -> Result<Vec<f64>> {
    Ok(solve_dense(problem, params, &SolverOptions::default())?.x)
}

/// Objective gain of `candidate` over `x` when it Pareto-dominates `x` in
/// weighted dominant shares and is feasible; `None` otherwise.
pub fn pareto_gain(
    problem: &AllocationProblem,
    params: &FairnessParams,
    x: &[f64],
    candidate: &[f64],
) -> Option<f64> {
    if !problem.is_feasible(candidate, 0.0) {
        return None;
    }
    let u = problem.utilities(x);
    let v = problem.utilities(candidate);
    let weak = u.iter().zip(&v).all(|(a, b)| b >= a);
    let strict = u.iter().zip(&v).any(|(a, b)| b > a);
    if !(weak && strict) {
        return None;
    }
    Some(objective_value(problem, params, candidate) - objective_value(problem, params, x))
}

fn advance(problem: &AllocationProblem, x: &[f64], dir: &[f64], cap: f64) -> Vec<f64> {
    let step = problem.max_step(x, dir).min(cap);
    x.iter().zip(dir).map(|(x, d)| x + step * d).collect()
}

/// Searches for a feasible allocation that Pareto-dominates `x` and raises
/// the objective by more than [`ORACLE_TOL`]: a radial scale-up, coordinate
/// hill-climbing and [`PARETO_SAMPLES`] random dominating perturbations with
/// magnitudes `10^U(-6, -1)`.
pub fn check_pareto(
    problem: &AllocationProblem,
    x: &[f64],
    params: &FairnessParams,
    seed: u64,
) -> PropertyReport {
    let mut report = PropertyReport::single("pareto_efficiency", params);
    let m = problem.analysts();
    let demanding: Vec<usize> = (0..m)
        .filter(|&i| problem.gamma[i].iter().any(|&g| g > 0.0))
        .collect();
    if demanding.is_empty() {
        return report;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |cand: Vec<f64>| {
        if let Some(gain) = pareto_gain(problem, params, x, &cand) {
            if gain > ORACLE_TOL && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                best = Some((gain, cand));
            }
        }
    };

    consider(advance(problem, x, x, f64::INFINITY));
    let mut climb = x.to_vec();
    for _ in 0..3 {
        for &i in &demanding {
            let mut dir = vec![0.0; m];
            dir[i] = 1.0;
            climb = advance(problem, &climb, &dir, f64::INFINITY);
        }
    }
    consider(climb);

    let mut rng = substream(seed, Stream::Instances, 1);
    for _ in 0..PARETO_SAMPLES {
        let magnitude = 10f64.powf(rng.random_range(-6.0..-1.0));
        let mut dir = vec![0.0; m];
        for &i in &demanding {
            if rng.random_bool(0.5) {
                let base = x[i].max(1.0 / (demanding.len() as f64 * problem.mu[i] * problem.weight[i]));
                dir[i] = magnitude * base * rng.random_range(0.0..1.0);
            }
        }
        if dir.iter().all(|&d| d == 0.0) {
            let i = demanding[rng.random_range(0..demanding.len())];
            dir[i] = magnitude * x[i].max(1.0);
        }
        consider(advance(problem, x, &dir, 1.0));
    }

    if let Some((gain, cand)) = best {
        report.violate(seed, cand, format!("dominating allocation raises the objective by {gain:e}"));
    }
    report
}

/// Weighted dominant share an analyst gets from an equal split of the
/// capacities: `min_k c_k / m` over the analysts with demand.
pub fn equal_split_share(problem: &AllocationProblem) -> f64 {
    let m = (0..problem.analysts())
        .filter(|&i| problem.gamma[i].iter().any(|&g| g > 0.0))
        .count();
    let cap = problem.capacity.iter().copied().fold(f64::INFINITY, f64::min);
    if m == 0 {
        0.0
    } else {
        cap / m as f64
    }
}

/// Every analyst's weighted dominant share is at least its equal-split value.
/// Witness: `[analyst, share, equal split]`.
pub fn check_sharing_incentive(
    problem: &AllocationProblem,
    x: &[f64],
    params: &FairnessParams,
    seed: u64,
) -> PropertyReport {
    let mut report = PropertyReport::single("sharing_incentive", params);
    let baseline = equal_split_share(problem);
    let u = problem.utilities(x);
    for i in 0..problem.analysts() {
        if problem.gamma[i].iter().any(|&g| g > 0.0) && u[i] < baseline - ORACLE_TOL {
            report.violate(
                seed,
                vec![i as f64, u[i], baseline],
                format!("analyst {i} gets {} below the equal split {baseline}", u[i]),
            );
        }
    }
    report
}

/// Weighted dominant share analyst `i` would reach with analyst `j`'s
/// granted bundle: `mu_i * min_k share_j[k] / gamma_ik`.
pub fn envied_share(problem: &AllocationProblem, x: &[f64], i: usize, j: usize) -> f64 {
    let scale = (0..problem.blocks())
        .filter(|&k| problem.gamma[i][k] > 0.0)
        .map(|k| problem.gamma[j][k] * problem.weight[j] * x[j] / problem.gamma[i][k])
        .fold(f64::INFINITY, f64::min);
    if scale.is_finite() {
        problem.mu[i] * scale
    } else {
        0.0
    }
}

/// No analyst prefers another's bundle. Witness: `[i, j, own share, envied share]`.
pub fn check_envy_freeness(
    problem: &AllocationProblem,
    x: &[f64],
    params: &FairnessParams,
    seed: u64,
) -> PropertyReport {
    let mut report = PropertyReport::single("envy_freeness", params);
    let u = problem.utilities(x);
    let m = problem.analysts();
    for i in 0..m {
        if !problem.gamma[i].iter().any(|&g| g > 0.0) {
            continue;
        }
        for j in (0..m).filter(|&j| j != i) {
            let envied = envied_share(problem, x, i, j);
            if envied > u[i] + ORACLE_TOL {
                report.violate(
                    seed,
                    vec![i as f64, j as f64, u[i], envied],
                    format!("analyst {i} gets {} but would get {envied} from {j}'s bundle", u[i]),
                );
            }
        }
    }
    report
}

/// Weighted dominant and non-dominant shares on a single binding block in
/// the alpha-fair regime:
///
/// ```text
/// D_j = (g_j/mu_j)^(-1/b)     / sum_i (g_i/mu_i)^((b-1)/b)
/// N_j = (g_j/mu_j)^((b-1)/b)  / sum_i (g_i/mu_i)^((b-1)/b)
/// ```
pub fn single_resource_shares(gammas: &[f64], mus: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
    let e = (beta - 1.0) / beta;
    let ratio: Vec<f64> = gammas.iter().zip(mus).map(|(g, m)| g / m).collect();
    let denom: f64 = ratio.iter().map(|r| r.powf(e)).sum();
    let dominant = ratio.iter().map(|r| r.powf(-1.0 / beta) / denom).collect();
    let other = ratio.iter().map(|r| r.powf(e) / denom).collect();
    (dominant, other)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lie {
    Dominant,
    NonDominant,
    Proportional,
}

impl Lie {
    pub const ALL: [Lie; 3] = [Lie::Dominant, Lie::NonDominant, Lie::Proportional];

    fn apply(self, gamma: f64, mu: f64, eta: f64) -> (f64, f64) {
        match self {
            Lie::Dominant => (gamma, mu * eta),
            Lie::NonDominant => (gamma * eta, mu),
            Lie::Proportional => (gamma * eta, mu * eta),
        }
    }
}

/// Shares of analyst `j` after it misreports by `eta` in the given way.
pub fn shares_after_lie(
    gammas: &[f64],
    mus: &[f64],
    beta: f64,
    j: usize,
    lie: Lie,
    eta: f64,
) -> (f64, f64) {
    let mut g = gammas.to_vec();
    let mut m = mus.to_vec();
    (g[j], m[j]) = lie.apply(g[j], m[j], eta);
    let (d, n) = single_resource_shares(&g, &m, beta);
    (d[j], n[j])
}

/// Probes every analyst of a single-block instance with the three lies.
/// Weak strategy proofness requires that inflating `mu` never raises the
/// non-dominant share while it raises the dominant one, that inflating
/// `gamma` alone never raises the dominant share, and that a proportional
/// lie changes nothing. Witness: `[analyst, lie, D, N, D', N']` with lies
/// numbered 0, 1, 2 as in [`Lie::ALL`].
pub fn check_strategy_proofness(
    problem: &AllocationProblem,
    params: &FairnessParams,
    eta: f64,
    seed: u64,
) -> Result<PropertyReport> {
    if problem.blocks() != 1 {
        return Err(Error::InvalidParams("strategy proofness probe needs a single block".into()));
    }
    if !(eta >= 1.0 && eta.is_finite()) {
        return Err(Error::InvalidParams(format!("inflation factor must be >= 1, got {eta}")));
    }
    let gammas: Vec<f64> = problem.gamma.iter().map(|g| g[0]).collect();
    if gammas.iter().any(|&g| g <= 0.0) {
        return Err(Error::InvalidParams("every analyst must demand the block".into()));
    }
    let mut report = PropertyReport::single("weak_strategy_proofness", params);
    let beta = params.beta;
    let (d, n) = single_resource_shares(&gammas, &problem.mu, beta);
    for j in 0..gammas.len() {
        for (code, lie) in Lie::ALL.into_iter().enumerate() {
            let (d2, n2) = shares_after_lie(&gammas, &problem.mu, beta, j, lie, eta);
            let tol_d = ORACLE_TOL * d[j].max(1.0);
            let tol_n = ORACLE_TOL * n[j].max(1.0);
            let broken = match lie {
                Lie::Dominant => d2 < d[j] - tol_d || n2 > n[j] + tol_n,
                Lie::NonDominant => d2 > d[j] + tol_d,
                Lie::Proportional => (d2 - d[j]).abs() > tol_d || (n2 - n[j]).abs() > tol_n,
            };
            if broken {
                report.violate(
                    seed,
                    vec![j as f64, code as f64, d[j], n[j], d2, n2],
                    format!("{lie:?} lie by analyst {j} moves shares ({}, {}) to ({d2}, {n2})", d[j], n[j]),
                );
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub beta: f64,
    pub efficiency: f64,
    /// Absolute dominant fairness over the analysts with positive share.
    pub fairness: f64,
}

/// Solves the instance in the alpha-fair regime of every `beta`.
pub fn tradeoff_sweep(problem: &AllocationProblem, betas: &[f64]) -> Result<Vec<TradeoffPoint>> {
    if betas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams("betas must be strictly increasing".into()));
    }
    betas
        .iter()
        .map(|&beta| {
            let params = FairnessParams::alpha_fair(beta)?;
            let x = allocate(problem, &params)?;
            let u = problem.utilities(&x);
            Ok(TradeoffPoint {
                beta,
                efficiency: dominant_efficiency(&u),
                fairness: active_fairness(&u, beta)?.map_or(0.0, f64::abs),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Pareto,
    SharingIncentive,
    EnvyFreeness,
    StrategyProofness,
}

/// Seed of the `index`-th instance of a batch.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Checks a property on `instances` random instances: 3x2 instances for
/// Pareto efficiency and envy-freeness, 2-4 analysts on a single block for
/// sharing incentive and strategy proofness (inflation 1.5).
pub fn check_batch(
    property: Property,
    params: &FairnessParams,
    instances: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let name = match property {
        Property::Pareto => "pareto_efficiency",
        Property::SharingIncentive => "sharing_incentive",
        Property::EnvyFreeness => "envy_freeness",
        Property::StrategyProofness => "weak_strategy_proofness",
    };
    let mut report = PropertyReport::new(name, params);
    for index in 0..instances {
        let s = instance_seed(seed, index);
        let single = match property {
            Property::Pareto | Property::EnvyFreeness => {
                let problem = random_instance(s, 3, 2);
                let x = allocate(&problem, params)?;
                if property == Property::Pareto {
                    check_pareto(&problem, &x, params, s)
                } else {
                    check_envy_freeness(&problem, &x, params, s)
                }
            }
            Property::SharingIncentive | Property::StrategyProofness => {
                let m = 2 + (s % 3) as usize;
                let problem = random_single_resource(s, m);
                if property == Property::SharingIncentive {
                    let x = allocate(&problem, params)?;
                    check_sharing_incentive(&problem, &x, params, s)
                } else {
                    check_strategy_proofness(&problem, params, 1.5, s)?
                }
            }
        };
        report.absorb(single);
    }
    Ok(report)
}

/// Named parameter regimes of the property checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Pareto efficiency, alpha-fair.
    Thm1,
    /// Sharing incentive, alpha-fair with `beta > 1`.
    Thm2a,
    /// Sharing incentive, alpha-fair with `beta < 1`.
    Thm2b,
    /// Envy-freeness, alpha-fair with `beta > 1`.
    Thm3a,
    /// Envy-freeness, alpha-fair with `beta < 1`.
    Thm3b,
    /// Envy-freeness with efficiency dominating the objective.
    Thm3d,
    /// Weak strategy proofness with `beta > 1`.
    Thm4a,
    /// Weak strategy proofness with `beta < 1`.
    Thm4b,
}

/// Efficiency weight standing in for an unbounded `lambda`.
pub const EFFICIENCY_ONLY_LAMBDA: f64 = 1e6;

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::Thm1,
        Regime::Thm2a,
        Regime::Thm2b,
        Regime::Thm3a,
        Regime::Thm3b,
        Regime::Thm3d,
        Regime::Thm4a,
        Regime::Thm4b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Thm1 => "thm1",
            Regime::Thm2a => "thm2a",
            Regime::Thm2b => "thm2b",
            Regime::Thm3a => "thm3a",
            Regime::Thm3b => "thm3b",
            Regime::Thm3d => "thm3d",
            Regime::Thm4a => "thm4a",
            Regime::Thm4b => "thm4b",
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            Regime::Thm2b | Regime::Thm3b | Regime::Thm4b => 0.5,
            _ => 2.2,
        }
    }

    pub fn params(self, beta: f64) -> Result<FairnessParams> {
        match self {
            Regime::Thm3d => FairnessParams::new(beta, Some(EFFICIENCY_ONLY_LAMBDA), 0.0),
            _ => FairnessParams::alpha_fair(beta),
        }
    }

    /// Runs the regime's property on the constructed instance of the regime
    /// (if any) followed by `instances` random ones.
    pub fn run(self, beta: Option<f64>, instances: usize, seed: u64) -> Result<PropertyReport> {
        let params = self.params(beta.unwrap_or(self.default_beta()))?;
        let property = match self {
            Regime::Thm1 => Property::Pareto,
            Regime::Thm2a | Regime::Thm2b => Property::SharingIncentive,
            Regime::Thm3a | Regime::Thm3b | Regime::Thm3d => Property::EnvyFreeness,
            Regime::Thm4a | Regime::Thm4b => Property::StrategyProofness,
        };
        let mut report = match self {
            Regime::Thm2b => {
                let problem = asymmetric_instance(0.9);
                let x = allocate(&problem, &params)?;
                check_sharing_incentive(&problem, &x, &params, seed)
            }
            Regime::Thm3b | Regime::Thm3d => {
                let problem = asymmetric_instance(if self == Regime::Thm3b { 0.9 } else { 0.8 });
                let x = allocate(&problem, &params)?;
                check_envy_freeness(&problem, &x, &params, seed)
            }
            _ => PropertyReport::new("", &params),
        };
        let batch = check_batch(property, &params, instances, seed)?;
        report.property = batch.property.clone();
        report.absorb(batch);
        Ok(report)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParams(format!("unknown regime {s:?}")))
    }
}
