//! Bounded quasi-Newton minimization with numerical gradients.
//!
//! Box constraints are removed by the logistic change of variables
//! `x = lo + (hi - lo)/(1 + e^{-u})`; BFGS with Armijo backtracking then runs
//! in the unconstrained `u` coordinates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "bound {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn to_unbounded(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                let w = hi - lo;
                let frac = ((v - lo) / w).clamp(1e-9, 1.0 - 1e-9);
                (frac / (1.0 - frac)).ln()
            })
            .collect()
    }

    fn to_bounded(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                lo + (hi - lo) / (1.0 + (-v).exp())
            })
            .collect()
    }

    /// Indices whose value sits within `rel` of the box width from a bound.
    pub fn hits(&self, x: &[f64], rel: f64) -> Vec<usize> {
        x.iter()
            .enumerate()
            .filter(|(i, &v)| {
                let w = self.upper[*i] - self.lower[*i];
                v - self.lower[*i] <= rel * w || self.upper[*i] - v <= rel * w
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// A uniformly drawn point inside the box.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the relative objective change of an accepted step is below this.
    pub f_tol: f64,
    /// Stop when the sup-norm of the gradient (in `u` coordinates) is below this.
    pub g_tol: f64,
    /// Central-difference step in `u` coordinates.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            f_tol: 1e-12,
            g_tol: 1e-8,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<'a, F> {
    f: &'a F,
    bounds: &'a Bounds,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(&self.bounds.to_bounded(u));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&mut self, u: &[f64], h: f64) -> Vec<f64> {
        let mut work = u.to_vec();
        (0..u.len())
            .map(|i| {
                let step = h * u[i].abs().max(1.0);
                work[i] = u[i] + step;
                let up = self.eval(&work);
                work[i] = u[i] - step;
                let down = self.eval(&work);
                work[i] = u[i];
                let g = (up - down) / (2.0 * step);
                if g.is_finite() {
                    g
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box from `x0`.
pub fn minimize<F>(f: &F, x0: &[f64], bounds: &Bounds, opts: &BfgsOptions) -> Result<OptimOutcome>
where
    F: Fn(&[f64]) -> f64,
{
    if x0.len() != bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: bounds.len(),
            got: x0.len(),
        });
    }
    let n = x0.len();
    let mut obj = Counted { f, bounds, evals: 0 };
    let mut u = bounds.to_unbounded(x0);
    let mut fu = obj.eval(&u);
    if !fu.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut g = obj.gradient(&u, opts.fd_step);
    let mut hinv = identity(n);
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if g.iter().all(|v| v.abs() < opts.g_tol) {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        // keep trial points from saturating the logistic map
        let max_step = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if max_step > 4.0 { 4.0 / max_step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = obj.eval(&trial);
            if ft <= fu + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((u_new, f_new)) = accepted else {
            // no descent along the search direction: stationary up to
            // finite-difference noise
            converged = g.iter().all(|v| v.abs() < opts.g_tol.sqrt());
            break;
        };
        let g_new = obj.gradient(&u_new, opts.fd_step);
        let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                hinv = identity(n);
                hinv.iter_mut().enumerate().for_each(|(i, row)| row[i] = scale);
                first = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        let rel_change = (fu - f_new).abs() / fu.abs().max(1e-300).max(1.0);
        u = u_new;
        fu = f_new;
        g = g_new;
        if rel_change < opts.f_tol {
            converged = true;
            break;
        }
    }

    Ok(OptimOutcome {
        x: bounds.to_bounded(&u),
        value: fu,
        iterations,
        evaluations: obj.evals,
        converged,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Result of a multi-start search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartOutcome {
    pub best: OptimOutcome,
    pub best_start: usize,
    pub starts: Vec<OptimOutcome>,
}

/// Runs BFGS from `x0` and from `extra_starts` seeded uniform points in the
/// box, in parallel, and keeps the lowest objective (earliest start on ties).
pub fn multi_start<F>(
    f: &F,
    x0: &[f64],
    bounds: &Bounds,
    extra_starts: usize,
    seed: u64,
    opts: &BfgsOptions,
) -> Result<MultiStartOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut points = vec![x0.to_vec()];
    for s in 0..extra_starts {
        let mut r = rng::substream(seed, s as u64);
        points.push(bounds.sample(&mut r));
    }
    let results: Vec<Option<OptimOutcome>> = points.par_iter().map(|p| minimize(f, p, bounds, opts).ok()).collect();
    let mut best: Option<(usize, OptimOutcome)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(r) = r {
            if best.as_ref().is_none_or(|(_, b)| r.value < b.value) {
                best = Some((i, r.clone()));
            }
        }
    }
    let (best_start, best) = best.ok_or_else(|| Error::Numerical("every optimizer start failed".into()))?;
    Ok(MultiStartOutcome {
        best,
        best_start,
        starts: results.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum_of_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let b = Bounds::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let out = minimize(&f, &[-1.2, 1.0], &b, &BfgsOptions::default()).unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4,
            "{out:?}"
        );
    }

    #[test]
    fn respects_bounds_and_reports_hits() {
        let f = |x: &[f64]| (x[0] - 5.0).powi(2) + (x[1] + 0.2).powi(2);
        let b = Bounds::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let out = minimize(&f, &[1.0, 0.5], &b, &BfgsOptions::default()).unwrap();
        assert!(out.x[0] <= 2.0 && out.x[0] > 1.99);
        assert!((out.x[1] + 0.2).abs() < 1e-5);
        assert_eq!(b.hits(&out.x, 1e-2), vec![0]);
    }

    #[test]
    fn multi_start_is_deterministic_and_picks_best() {
        // two basins; the global one at x = 2
        let f = |x: &[f64]| ((x[0] + 1.0).powi(2) + 0.5).min((x[0] - 2.0).powi(2));
        let b = Bounds::new(vec![-3.0], vec![3.0]).unwrap();
        let a = multi_start(&f, &[-1.5], &b, 4, 9, &BfgsOptions::default()).unwrap();
        let c = multi_start(&f, &[-1.5], &b, 4, 9, &BfgsOptions::default()).unwrap();
        assert_eq!(a, c);
        assert!((a.best.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
