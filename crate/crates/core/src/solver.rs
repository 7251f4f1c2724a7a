//! Analyst-level allocation: split each block's remaining capacity among
//! analysts by maximizing the platform utility.
//!
//! The objective is the log form of the platform utility,
//!
//! ```text
//! Phi(x) = sgn(1-b)/b * log(sum_i u_i^(1-b)) + (lambda - |1-b|/b) * log(sum_i u_i)
//! u_i    = mu_i * a_i * x_i,    a_i = T(t_i) * l_i
//! ```
//!
//! which is concave for `lambda >= |1-b|/b` and a monotone transform of the
//! alpha-fair objective `sum u^(1-b)/(1-b)` at equality. It is maximized
//! subject to `sum_i gamma_ik a_i x_i <= c_k`, `x >= 0` with a primal
//! log-barrier method: damped Newton centering steps on
//! `t * Phi(x) + sum_k log(slack_k) + sum_i log(x_i)` for an increasing
//! sequence of `t`. Block multipliers are read off the barrier as
//! `1 / (t * slack_k)` and certify the result through [`kkt_residual`].

use crate::error::{Error, Result};
use crate::ids::BlockId;
use crate::metrics::{waiting_coeff, FairnessParams};
use crate::workload::{AnalystDemand, ShareVector};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target KKT residual.
    pub tol: f64,
    /// Budget of Newton steps across all centering rounds.
    pub max_iter: usize,
    /// Growth factor of the barrier weight between centering rounds.
    pub barrier_growth: f64,
    /// Armijo sufficient-increase fraction for the backtracking search.
    pub armijo: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            barrier_growth: 10.0,
            armijo: 0.25,
        }
    }
}

/// Dense single-round allocation problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// `gamma[i][k]`: normalized demand of analyst `i` on block `k`.
    pub gamma: Vec<Vec<f64>>,
    /// Maximum share of each analyst. Usually `max_k gamma[i][k]`, but may
    /// cover blocks outside the problem.
    pub mu: Vec<f64>,
    /// `a_i = T(t_i) * l_i`.
    pub weight: Vec<f64>,
    pub capacity: Vec<f64>,
}

impl AllocationProblem {
    /// Problem with `mu_i = max_k gamma_ik`, unit weights and unit capacities.
    pub fn from_gamma(gamma: Vec<Vec<f64>>) -> Self {
        let mu = gamma.iter().map(|g| g.iter().copied().fold(0.0, f64::max)).collect();
        let m = gamma.len();
        let k = gamma.first().map_or(0, Vec::len);
        Self {
            gamma,
            mu,
            weight: vec![1.0; m],
            capacity: vec![1.0; k],
        }
    }

    pub fn analysts(&self) -> usize {
        self.gamma.len()
    }

    pub fn blocks(&self) -> usize {
        self.capacity.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.analysts();
        if self.mu.len() != m || self.weight.len() != m {
            return Err(Error::InvalidParams("mu/weight length mismatch".into()));
        }
        if self.gamma.iter().any(|g| g.len() != self.blocks()) {
            return Err(Error::InvalidParams("gamma rows must cover every block".into()));
        }
        if self.capacity.iter().any(|&c| !(c > 0.0 && c <= 1.0 + 1e-12)) {
            return Err(Error::InvalidParams("capacities must lie in (0, 1]".into()));
        }
        if self.gamma.iter().flatten().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidParams("demands must be finite and >= 0".into()));
        }
        for i in 0..m {
            let demands = self.gamma[i].iter().any(|&g| g > 0.0);
            if demands && !(self.mu[i] > 0.0 && self.weight[i] > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "analyst {i} needs positive mu and weight"
                )));
            }
        }
        Ok(())
    }

    /// Weighted dominant shares `mu_i a_i x_i`.
    pub fn utilities(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mu.iter().zip(&self.weight))
            .map(|(x, (m, a))| m * a * x)
            .collect()
    }

    /// Per-block consumption `sum_i gamma_ik a_i x_i`.
    pub fn loads(&self, x: &[f64]) -> Vec<f64> {
        (0..self.blocks())
            .map(|k| {
                (0..self.analysts())
                    .map(|i| self.gamma[i][k] * self.weight[i] * x[i])
                    .sum()
            })
            .collect()
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.iter().all(|&v| v >= -tol)
            && self
                .loads(x)
                .iter()
                .zip(&self.capacity)
                .all(|(l, c)| *l <= c + tol)
    }

    /// Largest step `s >= 0` along `dir` from `x` that stays feasible.
    pub fn max_step(&self, x: &[f64], dir: &[f64]) -> f64 {
        let loads = self.loads(x);
        let dload = self.loads(dir);
        loads
            .iter()
            .zip(&dload)
            .zip(&self.capacity)
            .filter(|((_, d), _)| **d > 0.0)
            .map(|((l, d), c)| ((c - l) / d).max(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    fn permuted(&self, order: &[usize]) -> Self {
        Self {
            gamma: order.iter().map(|&i| self.gamma[i].clone()).collect(),
            mu: order.iter().map(|&i| self.mu[i]).collect(),
            weight: order.iter().map(|&i| self.weight[i]).collect(),
            capacity: self.capacity.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSolution {
    pub x: Vec<f64>,
    /// Block multipliers in units of the log-form objective.
    pub multipliers: Vec<f64>,
    pub residual: f64,
    pub newton_steps: usize,
    /// Iterate at the end of every centering round.
    pub centers: Vec<Vec<f64>>,
}

/// Log-form objective over the active analysts of a problem.
struct Objective {
    scale: f64,
    exponent: f64,
    excess: f64,
    /// `mu_i * a_i` of the active analysts.
    w: Vec<f64>,
}

impl Objective {
    fn new(params: &FairnessParams, w: Vec<f64>) -> Self {
        Self {
            scale: params.sign() / params.beta,
            exponent: 1.0 - params.beta,
            excess: params.efficiency_excess(),
            w,
        }
    }

    /// Log of `u_i^p` shares, normalized: returns (`log sum u^p`, `u^p / sum u^p`).
    fn power_shares(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let logs: Vec<f64> = u.iter().map(|v| self.exponent * v.ln()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut q: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let sum: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= sum);
        (top + sum.ln(), q)
    }

    fn utilities(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.w).map(|(x, w)| x * w).collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = self.utilities(x);
        let (log_p, _) = self.power_shares(&u);
        let s: f64 = u.iter().sum();
        self.scale * log_p + self.excess * s.ln()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let u = self.utilities(x);
        let (_, q) = self.power_shares(&u);
        let s: f64 = u.iter().sum();
        let ap = self.scale * self.exponent;
        (0..u.len())
            .map(|i| self.w[i] * (ap * q[i] / u[i] + self.excess / s))
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let u = self.utilities(x);
        let (_, q) = self.power_shares(&u);
        let s: f64 = u.iter().sum();
        let ap = self.scale * self.exponent;
        let n = u.len();
        DMatrix::from_fn(n, n, |i, j| {
            let mut h = -ap * self.exponent * q[i] * q[j] / (u[i] * u[j]) - self.excess / (s * s);
            if i == j {
                h += ap * (self.exponent - 1.0) * q[i] / (u[i] * u[i]);
            }
            self.w[i] * self.w[j] * h
        })
    }
}

/// The active sub-problem: analysts with some demand and blocks with some load.
struct Reduced {
    analysts: Vec<usize>,
    blocks: Vec<usize>,
    /// `coef[r][i]`: `gamma * a` of active analyst `i` on active block `r`.
    coef: Vec<Vec<f64>>,
    capacity: Vec<f64>,
}

impl Reduced {
    fn new(problem: &AllocationProblem) -> Self {
        let analysts: Vec<usize> = (0..problem.analysts())
            .filter(|&i| problem.gamma[i].iter().any(|&g| g > 0.0))
            .collect();
        let blocks: Vec<usize> = (0..problem.blocks())
            .filter(|&k| analysts.iter().any(|&i| problem.gamma[i][k] > 0.0))
            .collect();
        let coef = blocks
            .iter()
            .map(|&k| {
                analysts
                    .iter()
                    .map(|&i| problem.gamma[i][k] * problem.weight[i])
                    .collect()
            })
            .collect();
        let capacity = blocks.iter().map(|&k| problem.capacity[k]).collect();
        Self {
            analysts,
            blocks,
            coef,
            capacity,
        }
    }

    fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.capacity)
            .map(|(row, c)| c - row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    fn barrier(&self, obj: &Objective, t: f64, x: &[f64]) -> Option<f64> {
        if x.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let slacks = self.slacks(x);
        if slacks.iter().any(|&s| s <= 0.0) {
            return None;
        }
        let v = t * obj.value(x)
            + slacks.iter().map(|s| s.ln()).sum::<f64>()
            + x.iter().map(|v| v.ln()).sum::<f64>();
        v.is_finite().then_some(v)
    }
}

/// Maximizes the platform utility over the capacity polytope.
pub fn solve_dense(
    problem: &AllocationProblem,
    params: &FairnessParams,
    opts: &SolverOptions,
) -> Result<DenseSolution> {
    problem.validate()?;
    let m = problem.analysts();
    let red = Reduced::new(problem);
    let n = red.analysts.len();
    if n == 0 {
        return Ok(DenseSolution {
            x: vec![0.0; m],
            multipliers: vec![0.0; problem.blocks()],
            residual: 0.0,
            newton_steps: 0,
            centers: Vec::new(),
        });
    }
    let w: Vec<f64> = red
        .analysts
        .iter()
        .map(|&i| problem.mu[i] * problem.weight[i])
        .collect();
    let obj = Objective::new(params, w.clone());

    // equal weighted dominant shares, scaled halfway to the boundary
    let mut x: Vec<f64> = w.iter().map(|w| 1.0 / (n as f64 * w)).collect();
    let worst = red
        .coef
        .iter()
        .zip(&red.capacity)
        .map(|(row, c)| row.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() / c)
        .fold(0.0, f64::max);
    x.iter_mut().for_each(|v| *v *= 0.5 / worst);

    let expand = |xr: &[f64]| {
        let mut full = vec![0.0; m];
        for (pos, &i) in red.analysts.iter().enumerate() {
            full[i] = xr[pos];
        }
        full
    };
    let dims = (n + red.blocks.len()) as f64;
    let check = |xr: &[f64], lr: &[f64]| {
        let mut full = vec![0.0; problem.blocks()];
        for (pos, l) in lr.iter().enumerate() {
            full[red.blocks[pos]] = *l;
        }
        let r = kkt_residual_dense(problem, params, &expand(xr), &full);
        (r, full)
    };
    let target = opts.tol * 1e-6;
    let mut t = 1.0;
    let mut steps = 0usize;
    let mut centers = Vec::new();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    while steps < opts.max_iter {
        center(&red, &obj, t, &mut x, opts, &mut steps)?;
        centers.push(expand(&x));
        if dims / t <= 1e-6 {
            // polish a copy; on a stall the barrier keeps going from its own center
            let mut xp = x.clone();
            let mut lp: Vec<f64> = red.slacks(&x).iter().map(|s| 1.0 / (t * s)).collect();
            polish(&red, &obj, t, &mut xp, &mut lp, opts, &mut steps, &mut |xr, lr| {
                check(xr, lr).0 <= target
            });
            let (r, mult) = check(&xp, &lp);
            if best.as_ref().is_none_or(|b| r < b.0) {
                best = Some((r, xp, mult));
            }
            if r <= target || dims / t <= 1e-13 {
                break;
            }
        }
        t *= opts.barrier_growth;
    }
    let (residual, xr, mult) = match best {
        Some(b) => b,
        None => {
            let lam: Vec<f64> = red.slacks(&x).iter().map(|s| 1.0 / (t * s)).collect();
            let (r, mult) = check(&x, &lam);
            (r, x, mult)
        }
    };
    let full = expand(&xr);
    if residual > opts.tol || steps > opts.max_iter {
        return Err(Error::SolverDiverged {
            iterations: steps,
            residual,
            best: full,
        });
    }
    centers.push(full.clone());
    Ok(DenseSolution {
        x: full,
        multipliers: mult,
        residual,
        newton_steps: steps,
        centers,
    })
}

/// Primal-dual Newton iterations from a barrier center. Slacks and
/// multipliers are carried as variables so they stay accurate once the
/// capacity constraints are nearly tight.
#[allow(clippy::too_many_arguments)]
fn polish(
    red: &Reduced,
    obj: &Objective,
    t: f64,
    x: &mut Vec<f64>,
    lam: &mut Vec<f64>,
    opts: &SolverOptions,
    steps: &mut usize,
    done: &mut dyn FnMut(&[f64], &[f64]) -> bool,
) {
    let n = x.len();
    let kk = lam.len();
    let mut s = red.slacks(x);
    let mut nu: Vec<f64> = x.iter().map(|x| 1.0 / (t * x)).collect();
    let residuals = |x: &[f64], s: &[f64], lam: &[f64], nu: &[f64], tau: f64| {
        let g = obj.gradient(x);
        let rd: Vec<f64> = (0..n)
            .map(|i| -g[i] + (0..kk).map(|k| red.coef[k][i] * lam[k]).sum::<f64>() - nu[i])
            .collect();
        let rp: Vec<f64> = (0..kk)
            .map(|k| (0..n).map(|i| red.coef[k][i] * x[i]).sum::<f64>() + s[k] - red.capacity[k])
            .collect();
        let norm = rd.iter().chain(&rp).map(|v| v * v).sum::<f64>()
            + (0..kk).map(|k| (s[k] * lam[k] - tau).powi(2)).sum::<f64>()
            + (0..n).map(|i| (x[i] * nu[i] - tau).powi(2)).sum::<f64>();
        (rd, rp, norm.sqrt())
    };
    for _ in 0..200 {
        if *steps >= opts.max_iter || done(x, lam) {
            return;
        }
        *steps += 1;
        let gap = (s.iter().zip(lam.iter()).map(|(a, b)| a * b).sum::<f64>()
            + x.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>())
            / (n + kk) as f64;
        if gap < 1e-300 {
            return;
        }
        let tau = 0.1 * gap;
        let (rd, rp, norm) = residuals(x, &s, lam, &nu, tau);
        let mut m = -obj.hessian(x);
        let mut rhs = DVector::from_fn(n, |i, _| -rd[i] + (tau - x[i] * nu[i]) / x[i]);
        for i in 0..n {
            m[(i, i)] += nu[i] / x[i];
        }
        for k in 0..kk {
            let d = lam[k] / s[k];
            let c = (tau - s[k] * lam[k] + lam[k] * rp[k]) / s[k];
            for i in 0..n {
                rhs[i] -= red.coef[k][i] * c;
                for j in 0..n {
                    m[(i, j)] += red.coef[k][i] * d * red.coef[k][j];
                }
            }
        }
        let dsc: Vec<f64> = (0..n).map(|i| m[(i, i)].abs().sqrt().max(f64::MIN_POSITIVE)).collect();
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (dsc[i] * dsc[j]));
        let srhs = DVector::from_fn(n, |i, _| rhs[i] / dsc[i]);
        let sol = match scaled.clone().cholesky() {
            Some(ch) => ch.solve(&srhs),
            None => match scaled.lu().solve(&srhs) {
                Some(v) => v,
                None => return,
            },
        };
        let dx: Vec<f64> = (0..n).map(|i| sol[i] / dsc[i]).collect();
        let ds: Vec<f64> = (0..kk)
            .map(|k| -rp[k] - (0..n).map(|i| red.coef[k][i] * dx[i]).sum::<f64>())
            .collect();
        let dl: Vec<f64> = (0..kk)
            .map(|k| (tau - s[k] * lam[k] - lam[k] * ds[k]) / s[k])
            .collect();
        let dn: Vec<f64> = (0..n)
            .map(|i| (tau - x[i] * nu[i] - nu[i] * dx[i]) / x[i])
            .collect();
        let mut alpha: f64 = 1.0;
        for (v, d) in x.iter().zip(&dx).chain(s.iter().zip(&ds)).chain(lam.iter().zip(&dl)).chain(nu.iter().zip(&dn)) {
            if *d < 0.0 {
                alpha = alpha.min(-0.995 * v / d);
            }
        }
        let mut accepted = false;
        while alpha > 1e-12 {
            let step = |v: &[f64], d: &[f64]| -> Vec<f64> {
                v.iter().zip(d).map(|(v, d)| v + alpha * d).collect()
            };
            let (nx, ns, nl, nn) = (step(x, &dx), step(&s, &ds), step(lam, &dl), step(&nu, &dn));
            let (_, _, new_norm) = residuals(&nx, &ns, &nl, &nn, tau);
            if new_norm.is_finite() && new_norm <= (1.0 - 0.01 * alpha) * norm {
                *x = nx;
                s = ns;
                *lam = nl;
                nu = nn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

fn center(
    red: &Reduced,
    obj: &Objective,
    t: f64,
    x: &mut Vec<f64>,
    opts: &SolverOptions,
    steps: &mut usize,
) -> Result<()> {
    let n = x.len();
    let mut value = red
        .barrier(obj, t, x)
        .ok_or_else(|| Error::AccountingError("barrier iterate left the interior".into()))?;
    for _ in 0..200 {
        if *steps >= opts.max_iter {
            return Ok(());
        }
        *steps += 1;
        let slacks = red.slacks(x);
        let g_obj = obj.gradient(x);
        let mut grad = DVector::from_fn(n, |i, _| t * g_obj[i] + 1.0 / x[i]);
        let mut neg_hess = -obj.hessian(x) * t;
        for i in 0..n {
            neg_hess[(i, i)] += 1.0 / (x[i] * x[i]);
        }
        for (row, s) in red.coef.iter().zip(&slacks) {
            for i in 0..n {
                grad[i] -= row[i] / s;
                for j in 0..n {
                    neg_hess[(i, j)] += row[i] * row[j] / (s * s);
                }
            }
        }
        // diagonal scaling keeps the Newton system well conditioned near the boundary
        let d: Vec<f64> = (0..n).map(|i| neg_hess[(i, i)].sqrt().max(f64::MIN_POSITIVE)).collect();
        let scaled = DMatrix::from_fn(n, n, |i, j| neg_hess[(i, j)] / (d[i] * d[j]));
        let rhs = DVector::from_fn(n, |i, _| grad[i] / d[i]);
        let dir = match scaled.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => scaled
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::AccountingError("singular Newton system".into()))?,
        };
        let dx: Vec<f64> = (0..n).map(|i| dir[i] / d[i]).collect();
        let decrement: f64 = (0..n).map(|i| grad[i] * dx[i]).sum();
        if decrement <= 1e-12 {
            return Ok(());
        }
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-20 {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
            if let Some(v) = red.barrier(obj, t, &cand) {
                if v >= value + opts.armijo * step * decrement {
                    *x = cand;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(());
        }
    }
    Ok(())
}

/// Log-form objective of an allocation over the analysts with demand.
/// `-inf` when some analyst with demand gets nothing and `beta > 1`.
pub fn objective_value(problem: &AllocationProblem, params: &FairnessParams, x: &[f64]) -> f64 {
    let active: Vec<usize> = (0..problem.analysts())
        .filter(|&i| problem.gamma[i].iter().any(|&g| g > 0.0))
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    let w: Vec<f64> = active.iter().map(|&i| problem.mu[i] * problem.weight[i]).collect();
    let xs: Vec<f64> = active.iter().map(|&i| x[i].max(0.0)).collect();
    let v = Objective::new(params, w).value(&xs);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Gradient of the log-form objective with respect to `x`, zero for
/// analysts without demand.
fn objective_gradient(problem: &AllocationProblem, params: &FairnessParams, x: &[f64]) -> Vec<f64> {
    let active: Vec<usize> = (0..problem.analysts())
        .filter(|&i| problem.gamma[i].iter().any(|&g| g > 0.0) && x[i] > 0.0)
        .collect();
    let mut full = vec![0.0; problem.analysts()];
    if active.is_empty() {
        return full;
    }
    let w: Vec<f64> = active.iter().map(|&i| problem.mu[i] * problem.weight[i]).collect();
    let obj = Objective::new(params, w);
    let xs: Vec<f64> = active.iter().map(|&i| x[i]).collect();
    for (pos, g) in obj.gradient(&xs).into_iter().enumerate() {
        full[active[pos]] = g;
    }
    full
}

/// KKT residual of an allocation with its block multipliers.
///
/// Sums the largest stationarity gap over analysts, the largest
/// complementary-slackness product `lambda_k * |c_k - load_k|` (both relative
/// to the largest marginal utility or price), and the largest relative
/// capacity violation. Zero at an exact optimum.
pub fn kkt_residual_dense(
    problem: &AllocationProblem,
    params: &FairnessParams,
    x: &[f64],
    multipliers: &[f64],
) -> f64 {
    let grad = objective_gradient(problem, params, x);
    let loads = problem.loads(x);
    let mut gaps = Vec::new();
    let mut scale: f64 = f64::MIN_POSITIVE;
    for i in 0..problem.analysts() {
        if !problem.gamma[i].iter().any(|&g| g > 0.0) {
            continue;
        }
        let price: f64 = (0..problem.blocks())
            .map(|k| multipliers[k] * problem.gamma[i][k] * problem.weight[i])
            .sum();
        scale = scale.max(grad[i].abs()).max(price);
        // a zero allocation leaves the log-form marginal unbounded, so it is never stationary
        gaps.push(if x[i] > 0.0 { (grad[i] - price).abs() } else { f64::INFINITY });
    }
    let stationarity = gaps.iter().fold(0.0_f64, |m, g| m.max(g / scale));
    let slackness = loads
        .iter()
        .zip(&problem.capacity)
        .zip(multipliers)
        .map(|((l, c), lam)| lam * (c - l).abs() / scale)
        .fold(0.0, f64::max);
    let infeasibility = loads
        .iter()
        .zip(&problem.capacity)
        .map(|(l, c)| ((l - c) / c).max(0.0))
        .chain(x.iter().map(|&v| (-v).max(0.0)))
        .chain(multipliers.iter().map(|&l| (-l).max(0.0)))
        .fold(0.0, f64::max);
    stationarity + slackness + infeasibility
}

/// Closed-form single-block allocation in the alpha-fair regime:
///
/// `x_i = (gamma_i a_i)^(-1/b) / ((mu_i a_i)^((b-1)/b) * sum_j (gamma_j/mu_j)^((b-1)/b))`
///
/// which exhausts the block: `sum_i gamma_i a_i x_i = 1`.
pub fn closed_form_single_resource(gammas: &[f64], mus: &[f64], a: &[f64], beta: f64) -> Vec<f64> {
    let e = (beta - 1.0) / beta;
    let denom: f64 = gammas.iter().zip(mus).map(|(g, m)| (g / m).powf(e)).sum();
    gammas
        .iter()
        .zip(mus.iter().zip(a))
        .map(|(g, (m, a))| (g * a).powf(-1.0 / beta) / ((m * a).powf(e) * denom))
        .collect()
}

/// Analyst allocation returned by [`solve_subproblem1`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalystAllocation {
    /// Scale of each analyst's demand, aligned with the input analysts.
    pub x: Vec<f64>,
    /// Granted fraction of each block, `gamma_ik * x_i * T(t_i) * l_i`.
    pub shares: Vec<ShareVector>,
    /// Block multipliers in units of the log-form objective.
    pub multipliers: ShareVector,
    pub residual: f64,
}

/// Builds the dense problem for aggregated analysts over `capacities`.
pub fn build_problem(
    analysts: &[AnalystDemand],
    params: &FairnessParams,
    capacities: &BTreeMap<BlockId, f64>,
) -> Result<(AllocationProblem, Vec<BlockId>)> {
    let blocks: Vec<BlockId> = capacities.keys().cloned().collect();
    for a in analysts {
        if let Some(k) = a.gamma.keys().find(|k| !capacities.contains_key(*k)) {
            return Err(Error::UnknownBlock(k.clone()));
        }
    }
    let problem = AllocationProblem {
        gamma: analysts
            .iter()
            .map(|a| blocks.iter().map(|k| a.gamma.get(k).copied().unwrap_or(0.0)).collect())
            .collect(),
        mu: analysts.iter().map(|a| a.mu).collect(),
        weight: analysts
            .iter()
            .map(|a| waiting_coeff(a.waiting_time as f64, params.rho) * a.loss)
            .collect(),
        capacity: blocks.iter().map(|k| capacities[k]).collect(),
    };
    Ok((problem, blocks))
}

/// Splits block capacities among analysts.
pub fn solve_subproblem1(
    analysts: &[AnalystDemand],
    params: &FairnessParams,
    capacities: &BTreeMap<BlockId, f64>,
) -> Result<AnalystAllocation> {
    solve_subproblem1_with(analysts, params, capacities, &SolverOptions::default())
}

pub fn solve_subproblem1_with(
    analysts: &[AnalystDemand],
    params: &FairnessParams,
    capacities: &BTreeMap<BlockId, f64>,
    opts: &SolverOptions,
) -> Result<AnalystAllocation> {
    let (problem, blocks) = build_problem(analysts, params, capacities)?;
    let sol = solve_dense(&problem, params, opts)?;
    let shares = (0..problem.analysts())
        .map(|i| {
            blocks
                .iter()
                .enumerate()
                .filter(|(k, _)| problem.gamma[i][*k] > 0.0)
                .map(|(k, id)| (id.clone(), problem.gamma[i][k] * problem.weight[i] * sol.x[i]))
                .collect()
        })
        .collect();
    Ok(AnalystAllocation {
        x: sol.x,
        shares,
        multipliers: blocks.into_iter().zip(sol.multipliers).collect(),
        residual: sol.residual,
    })
}

/// KKT residual of an [`AnalystAllocation`] against its inputs.
pub fn kkt_residual(
    allocation: &AnalystAllocation,
    analysts: &[AnalystDemand],
    params: &FairnessParams,
    capacities: &BTreeMap<BlockId, f64>,
) -> Result<f64> {
    let (problem, blocks) = build_problem(analysts, params, capacities)?;
    let mult: Vec<f64> = blocks
        .iter()
        .map(|k| allocation.multipliers.get(k).copied().unwrap_or(0.0))
        .collect();
    Ok(kkt_residual_dense(&problem, params, &allocation.x, &mult))
}

/// Solves the problem with its analysts reordered; used to check order independence.
pub fn solve_permuted(
    problem: &AllocationProblem,
    params: &FairnessParams,
    order: &[usize],
) -> Result<Vec<f64>> {
    let sol = solve_dense(&problem.permuted(order), params, &SolverOptions::default())?;
    let mut x = vec![0.0; problem.analysts()];
    for (pos, &i) in order.iter().enumerate() {
        x[i] = sol.x[pos];
    }
    Ok(x)
}
