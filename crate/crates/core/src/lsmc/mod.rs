//! Least-squares Monte Carlo for the harvesting problem.
//!
//! Feed costs are handled as a running cost: the regression target at date
//! `k` is the realized value from `k+1` on minus the feed bill for
//! `(t_k, t_{k+1}]`, all in time-0 money. Cumulative feed cost never has to
//! enter the state, which stays `(S¹, δ¹)` or `(S¹, δ¹, S², δ²)`.

mod problem;
mod regression;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use problem::{FeedMode, FeedModel, HarvestProblem};
pub use regression::{least_squares, LeastSquares, QuadraticBasis};

use crate::error::{Error, Result};
use crate::model::PathSet;

/// Paths per work unit in rule evaluation. Fixed so that batch composition,
/// and therefore every floating-point result, is independent of the thread
/// count.
const WALK_CHUNK: usize = 4096;

/// Maps raw states `(S, δ, ...)` to the regression/classifier coordinates
/// `(log S, δ, ...)`, keeping the first `dim` components.
#[inline]
pub fn state_features(state: &[f64], dim: usize, out: &mut [f64]) {
    for c in 0..dim / 2 {
        out[2 * c] = state[2 * c].ln();
        out[2 * c + 1] = state[2 * c + 1];
    }
}

/// A rule deciding, date by date, whether to harvest.
pub trait StoppingRule: Sync {
    /// Number of leading state components the rule reads.
    fn state_dim(&self) -> usize;

    /// Seed of the paths the rule was fitted on.
    fn training_seed(&self) -> u64;

    /// Harvest immediately at t = 0.
    fn stops_at_zero(&self) -> bool {
        false
    }

    /// Decides for a batch of states at date `k` (`1 ≤ k < N`). `states` is
    /// row-major with `state_dim()` raw components per row; `harvest` holds
    /// the matching discounted harvest values.
    fn decide(&self, k: usize, states: &[f64], harvest: &[f64], stop: &mut [bool]);
}

/// Per-path stopping dates and values of a rule on a path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingOutcome {
    pub stop_index: Vec<u32>,
    /// `e^{-rτ}(S¹_τ B(τ) - CH(τ)) - CF(τ)` per path.
    pub values: Vec<f64>,
    pub v0: f64,
    pub std_err: f64,
}

impl StoppingOutcome {
    pub fn from_paths(stop_index: Vec<u32>, values: Vec<f64>) -> Self {
        let (v0, std_err) = mean_and_se(&values);
        Self {
            stop_index,
            values,
            v0,
            std_err,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    pub fn mean_stop_index(&self) -> f64 {
        self.stop_index.iter().map(|&k| k as f64).sum::<f64>() / self.stop_index.len() as f64
    }
}

/// Sequential mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Continuation regression for one exercise date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateRegression {
    /// Feature centering applied before the basis.
    pub center: Vec<f64>,
    /// Feature scaling applied before the basis.
    pub scale: Vec<f64>,
    pub coef: Vec<f64>,
    pub rank_deficient: bool,
}

impl DateRegression {
    #[inline]
    fn continuation(&self, basis: &QuadraticBasis, features: &mut [f64]) -> f64 {
        for (i, f) in features.iter_mut().enumerate() {
            *f = (*f - self.center[i]) / self.scale[i];
        }
        basis.dot(features, &self.coef)
    }
}

/// A fitted LSMC exercise rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcRule {
    pub mode: FeedMode,
    pub state_dim: usize,
    pub basis_len: usize,
    /// Regressions for dates `1..N`; entry `i` belongs to date `i + 1`.
    pub dates: Vec<DateRegression>,
    pub stop_at_zero: bool,
    pub training_seed: u64,
}

impl LsmcRule {
    pub fn steps(&self) -> usize {
        self.dates.len() + 1
    }

    /// Dates whose design matrix was rank deficient.
    pub fn rank_deficient_dates(&self) -> Vec<usize> {
        self.dates
            .iter()
            .enumerate()
            .filter(|(_, d)| d.rank_deficient)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Fitted continuation value at date `k` for a raw state.
    pub fn continuation(&self, k: usize, state: &[f64]) -> f64 {
        let basis = QuadraticBasis::new(self.state_dim);
        let mut f = [0.0; 4];
        state_features(state, self.state_dim, &mut f);
        self.dates[k - 1].continuation(&basis, &mut f[..self.state_dim])
    }
}

impl StoppingRule for LsmcRule {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn training_seed(&self) -> u64 {
        self.training_seed
    }

    fn stops_at_zero(&self) -> bool {
        self.stop_at_zero
    }

    fn decide(&self, k: usize, states: &[f64], harvest: &[f64], stop: &mut [bool]) {
        let d = self.state_dim;
        let basis = QuadraticBasis::new(d);
        let reg = &self.dates[k - 1];
        let mut f = [0.0; 4];
        for (i, s) in states.chunks_exact(d).enumerate() {
            state_features(s, d, &mut f);
            let cont = reg.continuation(&basis, &mut f[..d]);
            stop[i] = harvest[i] >= cont;
        }
    }
}

/// Harvests at a fixed date `k` (or at `N` if `k ≥ N`) regardless of state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedDateRule {
    pub date: usize,
    pub state_dim: usize,
    pub training_seed: u64,
}

impl StoppingRule for FixedDateRule {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn training_seed(&self) -> u64 {
        self.training_seed
    }

    fn stops_at_zero(&self) -> bool {
        self.date == 0
    }

    fn decide(&self, k: usize, _states: &[f64], _harvest: &[f64], stop: &mut [bool]) {
        stop.iter_mut().for_each(|s| *s = k == self.date);
    }
}

/// In-sample outcome of any rule on the paths it was built from.
pub fn apply_in_sample<R: StoppingRule + ?Sized>(
    rule: &R,
    paths: &PathSet,
    problem: &HarvestProblem,
    feed: &FeedModel,
) -> Result<StoppingOutcome> {
    walk(rule, paths, problem, feed)
}

/// Fits an exercise rule on `paths` by backward induction and reports its
/// in-sample outcome under the same feed model.
pub fn solve(paths: &PathSet, problem: &HarvestProblem, feed: &FeedModel) -> Result<(LsmcRule, StoppingOutcome)> {
    problem.check_paths(paths, feed)?;
    let mode = feed.mode();
    let state_dim = mode.state_dim();
    if paths.dim() != state_dim {
        return Err(Error::DimensionMismatch {
            expected: state_dim,
            got: paths.dim(),
        });
    }
    let m = paths.n_paths();
    let n = problem.grid().steps;
    let nodes = n + 1;
    let basis = QuadraticBasis::new(state_dim);
    let nb = basis.len();

    // Harvest values and cumulative feed costs, [path][date].
    let mut harvest = vec![0.0; m * nodes];
    let mut feed_cost = vec![0.0; m * nodes];
    harvest
        .par_chunks_mut(nodes)
        .zip(feed_cost.par_chunks_mut(nodes))
        .enumerate()
        .for_each(|(p, (h, cf))| {
            for (k, hk) in h.iter_mut().enumerate() {
                *hk = problem.harvest_value(k, paths.spot(p, k, 0));
            }
            problem.feed_costs(paths, p, feed, cf);
        });

    let mut value_to_go: Vec<f64> = (0..m).map(|p| harvest[p * nodes + n]).collect();
    let mut target = vec![0.0; m];
    let mut features = vec![0.0; m * state_dim];
    let mut dates = Vec::with_capacity(n.saturating_sub(1));

    for k in (1..n).rev() {
        for p in 0..m {
            let inc = feed_cost[p * nodes + k + 1] - feed_cost[p * nodes + k];
            target[p] = value_to_go[p] - inc;
        }
        features
            .par_chunks_mut(state_dim)
            .enumerate()
            .for_each(|(p, f)| state_features(paths.state(p, k), state_dim, f));
        let (center, scale) = standardization(&features, state_dim);
        for f in features.chunks_exact_mut(state_dim) {
            for i in 0..state_dim {
                f[i] = (f[i] - center[i]) / scale[i];
            }
        }
        let mut row = vec![0.0; nb];
        let mut design = DMatrix::<f64>::zeros(m, nb);
        for (p, f) in features.chunks_exact(state_dim).enumerate() {
            basis.eval_into(f, &mut row);
            for (j, v) in row.iter().enumerate() {
                design[(p, j)] = *v;
            }
        }
        let ls = least_squares(design, &DVector::from_column_slice(&target))?;
        for (p, f) in features.chunks_exact(state_dim).enumerate() {
            let cont = basis.dot(f, &ls.coef);
            let h = harvest[p * nodes + k];
            value_to_go[p] = if h >= cont { h } else { target[p] };
        }
        dates.push(DateRegression {
            center,
            scale,
            coef: ls.coef,
            rank_deficient: ls.rank_deficient,
        });
    }
    dates.reverse();

    // At t = 0 every path shares the state, so the continuation value is the
    // plain average of the realized targets.
    let stop_at_zero = problem.exercise_at_zero() && {
        let cont0 = (0..m)
            .map(|p| value_to_go[p] - (feed_cost[p * nodes + 1] - feed_cost[p * nodes]))
            .sum::<f64>()
            / m as f64;
        harvest[0] >= cont0
    };

    let rule = LsmcRule {
        mode,
        state_dim,
        basis_len: nb,
        dates,
        stop_at_zero,
        training_seed: paths.seed(),
    };
    let outcome = walk(&rule, paths, problem, feed)?;
    Ok((rule, outcome))
}

fn standardization(features: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (features.len() / dim) as f64;
    let mut center = vec![0.0; dim];
    for f in features.chunks_exact(dim) {
        for i in 0..dim {
            center[i] += f[i];
        }
    }
    center.iter_mut().for_each(|c| *c /= m);
    let mut var = vec![0.0; dim];
    for f in features.chunks_exact(dim) {
        for i in 0..dim {
            var[i] += (f[i] - center[i]) * (f[i] - center[i]);
        }
    }
    let scale = var
        .iter()
        .zip(&center)
        .map(|(v, c)| {
            let sd = (v / m).sqrt();
            if sd > 1e-12 * c.abs().max(1.0) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (center, scale)
}

/// Applies `rule` forward on `paths`: harvest at the first date the rule
/// says so, at `N` otherwise.
pub(crate) fn walk<R: StoppingRule + ?Sized>(
    rule: &R,
    paths: &PathSet,
    problem: &HarvestProblem,
    feed: &FeedModel,
) -> Result<StoppingOutcome> {
    problem.check_paths(paths, feed)?;
    let d = rule.state_dim();
    if d > paths.dim() {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: paths.dim(),
        });
    }
    let n = problem.grid().steps;
    let m = paths.n_paths();
    let mut stop_index = vec![n as u32; m];
    let mut values = vec![0.0; m];

    stop_index
        .par_chunks_mut(WALK_CHUNK)
        .zip(values.par_chunks_mut(WALK_CHUNK))
        .enumerate()
        .for_each(|(chunk, (taus, vals))| {
            let first = chunk * WALK_CHUNK;
            let len = taus.len();
            if rule.stops_at_zero() {
                taus.iter_mut().for_each(|t| *t = 0);
            } else {
                let mut alive: Vec<usize> = (0..len).collect();
                let mut states = Vec::with_capacity(len * d);
                let mut harvest = Vec::with_capacity(len);
                let mut stop = vec![false; len];
                for k in 1..n {
                    if alive.is_empty() {
                        break;
                    }
                    states.clear();
                    harvest.clear();
                    for &i in &alive {
                        states.extend_from_slice(&paths.state(first + i, k)[..d]);
                        harvest.push(problem.harvest_value(k, paths.spot(first + i, k, 0)));
                    }
                    rule.decide(k, &states, &harvest, &mut stop[..alive.len()]);
                    let mut j = 0;
                    alive.retain(|&i| {
                        let s = stop[j];
                        j += 1;
                        if s {
                            taus[i] = k as u32;
                        }
                        !s
                    });
                }
            }
            let mut cf = vec![0.0; n + 1];
            for i in 0..len {
                let p = first + i;
                let tau = taus[i] as usize;
                problem.feed_costs(paths, p, feed, &mut cf);
                vals[i] = problem.harvest_value(tau, paths.spot(p, tau, 0)) - cf[tau];
            }
        });

    Ok(StoppingOutcome::from_paths(stop_index, values))
}

/// Out-of-sample value of any rule under stochastic feed costs.
pub fn evaluate_rule<R: StoppingRule + ?Sized>(
    rule: &R,
    fresh: &PathSet,
    problem: &HarvestProblem,
) -> Result<StoppingOutcome> {
    if fresh.seed() == rule.training_seed() {
        return Err(Error::SeedReuse(fresh.seed()));
    }
    if fresh.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: fresh.dim(),
        });
    }
    walk(rule, fresh, problem, &FeedModel::Stochastic)
}

/// Out-of-sample value of an LSMC rule under stochastic feed costs. A
/// deterministic-mode rule reads only the salmon components.
pub fn evaluate(rule: &LsmcRule, fresh: &PathSet, problem: &HarvestProblem) -> Result<StoppingOutcome> {
    evaluate_rule(rule, fresh, problem)
}

/// Pathwise comparison of two rules on shared fresh paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// `V₀(A) / V₀(B)`.
    pub ri: f64,
    pub v0_a: f64,
    pub v0_b: f64,
    pub std_err_a: f64,
    pub std_err_b: f64,
    /// Standard error of the mean paired value difference `A - B`.
    pub std_err_diff: f64,
    /// `τ_A(p) - τ_B(p)` in grid steps.
    pub stop_diff: Vec<i32>,
    /// `Y_A(p) - Y_B(p)`.
    pub value_diff: Vec<f64>,
    pub frac_a_earlier: f64,
    pub frac_same: f64,
    pub frac_a_later: f64,
}

impl CompareReport {
    /// Counts of each stopping-date difference, sorted by difference.
    pub fn stop_diff_histogram(&self) -> Vec<(i32, usize)> {
        let mut sorted = self.stop_diff.clone();
        sorted.sort_unstable();
        let mut out: Vec<(i32, usize)> = Vec::new();
        for d in sorted {
            match out.last_mut() {
                Some((v, c)) if *v == d => *c += 1,
                _ => out.push((d, 1)),
            }
        }
        out
    }
}

pub fn compare<A: StoppingRule + ?Sized, B: StoppingRule + ?Sized>(
    rule_a: &A,
    rule_b: &B,
    fresh: &PathSet,
    problem: &HarvestProblem,
) -> Result<CompareReport> {
    let a = evaluate_rule(rule_a, fresh, problem)?;
    let b = evaluate_rule(rule_b, fresh, problem)?;
    Ok(compare_outcomes(&a, &b))
}

pub fn compare_outcomes(a: &StoppingOutcome, b: &StoppingOutcome) -> CompareReport {
    let stop_diff: Vec<i32> = a
        .stop_index
        .iter()
        .zip(&b.stop_index)
        .map(|(x, y)| *x as i32 - *y as i32)
        .collect();
    let value_diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let m = stop_diff.len() as f64;
    let frac = |f: fn(&i32) -> bool| stop_diff.iter().filter(|d| f(d)).count() as f64 / m;
    CompareReport {
        ri: a.v0 / b.v0,
        v0_a: a.v0,
        v0_b: b.v0,
        std_err_a: a.std_err,
        std_err_b: b.std_err,
        std_err_diff: mean_and_se(&value_diff).1,
        frac_a_earlier: frac(|d| *d < 0),
        frac_same: frac(|d| *d == 0),
        frac_a_later: frac(|d| *d > 0),
        stop_diff,
        value_diff,
    }
}

#[cfg(test)]
mod tests;
