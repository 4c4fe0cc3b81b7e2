//! Linear Gaussian state-space filter for (log spot, convenience yield)
//! observed through log futures prices, and its maximum-likelihood fit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::cortazar::cortazar_inner_logs;
use super::optimize::{multi_start, Bounds};
use super::{
    bound_hits, default_maturities, CalibrationMethod, CalibrationResult, Diagnostics, FittedState, FixedPanel,
    FuturesPanel, Goodness, SearchOptions, PARAM_NAMES,
};
use crate::error::{Error, Result};
use crate::model::CommodityParams;

/// Smallest admitted measurement-error variance.
pub const MEASUREMENT_VAR_FLOOR: f64 = 1e-6;

/// Transition and measurement matrices of the filter.
///
/// Transition: `X' = c + T X + η`, `η ~ N(0, E)`, with `X = (log S, δ)`.
/// Measurement: `y_j = d_j + Z_j X + ε_j`, `ε ~ N(0, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSpec {
    pub c: [f64; 2],
    pub t: [[f64; 2]; 2],
    pub e: [[f64; 2]; 2],
    pub maturities: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<[f64; 2]>,
    pub meas_var: Vec<f64>,
    pub init_mean: [f64; 2],
    pub init_cov: [[f64; 2]; 2],
}

impl KalmanSpec {
    /// Euler discretization with step `dt` of the spot and yield dynamics
    /// under the historical measure, with spot drift `mu`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &CommodityParams,
        r: f64,
        mu: f64,
        dt: f64,
        maturities: &[f64],
        measurement_sd: &[f64],
        init_mean: [f64; 2],
        init_cov: [[f64; 2]; 2],
    ) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        if !mu.is_finite() || !r.is_finite() {
            return Err(Error::InvalidParameter("drift and rate must be finite".into()));
        }
        if maturities.is_empty() {
            return Err(Error::InvalidInput("no maturities".into()));
        }
        if measurement_sd.len() != maturities.len() {
            return Err(Error::DimensionMismatch {
                expected: maturities.len(),
                got: measurement_sd.len(),
            });
        }
        if measurement_sd.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("measurement sd must be finite".into()));
        }
        let (s1, s2, k, rho) = (params.sigma1, params.sigma2, params.kappa, params.rho);
        let cov = rho * s1 * s2 * dt;
        let loads: Vec<_> = maturities.iter().map(|&m| params.loadings(r, m)).collect();
        Ok(Self {
            c: [(mu - 0.5 * s1 * s1) * dt, k * params.alpha * dt],
            t: [[1.0, -dt], [0.0, 1.0 - k * dt]],
            e: [[s1 * s1 * dt, cov], [cov, s2 * s2 * dt]],
            maturities: maturities.to_vec(),
            d: loads.iter().map(|l| l.a).collect(),
            z: loads.iter().map(|l| [1.0, -l.b]).collect(),
            meas_var: measurement_sd
                .iter()
                .map(|s| (s * s).max(MEASUREMENT_VAR_FLOOR))
                .collect(),
            init_mean,
            init_cov,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub loglik: f64,
    /// Filtered `(log S, δ)` after each date's update.
    pub states: Vec<[f64; 2]>,
    /// One-step-ahead prediction errors of the observations.
    pub innovations: Vec<Vec<f64>>,
}

/// In-place lower Cholesky factor of the row-major `n × n` matrix `a`.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) {
            return false;
        }
        let l = diag.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / l;
        }
    }
    true
}

fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Runs the predict/update recursion over `log_prices` (one row per date, one
/// column per maturity of `spec`). The first date updates the initial prior
/// directly.
pub fn kalman_filter(spec: &KalmanSpec, log_prices: &[Vec<f64>]) -> Result<KalmanOutput> {
    let p = spec.maturities.len();
    let mut x = spec.init_mean;
    let mut pm = spec.init_cov;
    let mut f = vec![0.0; p * p];
    let mut zp = vec![[0.0; 2]; p];
    let mut w0 = vec![0.0; p];
    let mut w1 = vec![0.0; p];
    let mut loglik = 0.0;
    let mut states = Vec::with_capacity(log_prices.len());
    let mut innovations = Vec::with_capacity(log_prices.len());
    let (t, c, e) = (&spec.t, &spec.c, &spec.e);

    for (i, y) in log_prices.iter().enumerate() {
        if y.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: y.len(),
            });
        }
        if i > 0 {
            x = [
                c[0] + t[0][0] * x[0] + t[0][1] * x[1],
                c[1] + t[1][0] * x[0] + t[1][1] * x[1],
            ];
            let mut tp = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    tp[a][b] = t[a][0] * pm[0][b] + t[a][1] * pm[1][b];
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    pm[a][b] = tp[a][0] * t[b][0] + tp[a][1] * t[b][1] + e[a][b];
                }
            }
        }
        let mut v = vec![0.0; p];
        for j in 0..p {
            let z = spec.z[j];
            zp[j] = [z[0] * pm[0][0] + z[1] * pm[1][0], z[0] * pm[0][1] + z[1] * pm[1][1]];
            v[j] = y[j] - spec.d[j] - z[0] * x[0] - z[1] * x[1];
        }
        for j in 0..p {
            for l in 0..p {
                f[j * p + l] = zp[j][0] * spec.z[l][0] + zp[j][1] * spec.z[l][1];
            }
            f[j * p + j] += spec.meas_var[j];
        }
        if !cholesky(&mut f, p) {
            return Err(Error::NotPositiveDefinite { index: i });
        }
        let logdet: f64 = (0..p).map(|j| 2.0 * f[j * p + j].ln()).sum();
        let mut u = v.clone();
        forward(&f, p, &mut u);
        let quad: f64 = u.iter().map(|a| a * a).sum();
        backward(&f, p, &mut u);
        for j in 0..p {
            w0[j] = zp[j][0];
            w1[j] = zp[j][1];
        }
        forward(&f, p, &mut w0);
        backward(&f, p, &mut w0);
        forward(&f, p, &mut w1);
        backward(&f, p, &mut w1);
        for a in 0..2 {
            x[a] += (0..p).map(|j| zp[j][a] * u[j]).sum::<f64>();
        }
        let g00: f64 = (0..p).map(|j| zp[j][0] * w0[j]).sum();
        let g01: f64 = (0..p).map(|j| zp[j][0] * w1[j]).sum();
        let g10: f64 = (0..p).map(|j| zp[j][1] * w0[j]).sum();
        let g11: f64 = (0..p).map(|j| zp[j][1] * w1[j]).sum();
        pm[0][0] -= g00;
        pm[1][1] -= g11;
        let off = 0.5 * (pm[0][1] - g01 + pm[1][0] - g10);
        pm[0][1] = off;
        pm[1][0] = off;

        loglik += -0.5 * (p as f64 * (2.0 * PI).ln() + logdet + quad);
        states.push(x);
        innovations.push(v);
    }
    if !loglik.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok(KalmanOutput {
        loglik,
        states,
        innovations,
    })
}

/// Settings of the maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanOptions {
    /// Step between consecutive panel dates in years.
    pub dt: f64,
    /// Fixed maturity grid the raw quotes are projected on.
    pub maturities: Vec<f64>,
    /// Estimate the spot drift instead of holding it fixed.
    pub estimate_mu: bool,
    /// Fixed spot drift, or the starting value when estimated; the rate when absent.
    pub mu: Option<f64>,
    pub mu_bounds: [f64; 2],
    /// Bounds on each measurement-error standard deviation.
    pub sd_bounds: [f64; 2],
    /// Starting measurement-error standard deviation.
    pub init_sd: f64,
    pub search: SearchOptions,
}

impl Default for KalmanOptions {
    fn default() -> Self {
        Self {
            dt: 1.0 / 252.0,
            maturities: default_maturities(),
            estimate_mu: false,
            mu: None,
            mu_bounds: [-2.0, 2.0],
            sd_bounds: [1e-3, 0.5],
            init_sd: 0.01,
            search: SearchOptions::default(),
        }
    }
}

struct Layout<'a> {
    r: f64,
    opts: &'a KalmanOptions,
    mu_fixed: f64,
}

impl Layout<'_> {
    fn unpack(&self, x: &[f64]) -> Result<(CommodityParams, Vec<f64>, f64)> {
        let p = self.opts.maturities.len();
        let params = CommodityParams::from_vector(&x[..6], self.opts.search.signed_premium)?;
        let sd = x[6..6 + p].to_vec();
        let mu = if self.opts.estimate_mu { x[6 + p] } else { self.mu_fixed };
        Ok((params, sd, mu))
    }

    fn spec(&self, x: &[f64], fixed: &FixedPanel) -> Result<KalmanSpec> {
        let (params, sd, mu) = self.unpack(x)?;
        let prior = cortazar_inner_logs(&params, self.r, &fixed.maturities, &fixed.log_prices[0])?;
        KalmanSpec::new(
            &params,
            self.r,
            mu,
            self.opts.dt,
            &fixed.maturities,
            &sd,
            [prior.log_spot, prior.convenience_yield],
            [[1.0, 0.0], [0.0, 1.0]],
        )
    }
}

/// Maximizes the filter log-likelihood over the parameters, the measurement
/// standard deviations and, optionally, the spot drift.
pub fn kalman_calibrate(
    panel: &FuturesPanel,
    r: f64,
    init: &CommodityParams,
    opts: &KalmanOptions,
) -> Result<CalibrationResult> {
    if !r.is_finite() {
        return Err(Error::InvalidParameter(format!("rate must be finite, got {r}")));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", opts.dt)));
    }
    if opts.sd_bounds[0] < MEASUREMENT_VAR_FLOOR.sqrt() {
        return Err(Error::InvalidParameter(format!(
            "measurement sd lower bound must be >= {}",
            MEASUREMENT_VAR_FLOOR.sqrt()
        )));
    }
    let fixed = panel.to_fixed_grid(&opts.maturities)?;
    let p = fixed.maturities.len();
    let mu0 = opts.mu.unwrap_or(r);

    let mut x0 = opts.search.start(init)?;
    let mut lower = opts.search.bounds.lower.to_vec();
    let mut upper = opts.search.bounds.upper.to_vec();
    opts.search.bounds.validate(opts.search.signed_premium)?;
    let mut names: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    for j in 0..p {
        x0.push(opts.init_sd.clamp(opts.sd_bounds[0], opts.sd_bounds[1]));
        lower.push(opts.sd_bounds[0]);
        upper.push(opts.sd_bounds[1]);
        names.push(format!("measurement_sd[{j}]"));
    }
    if opts.estimate_mu {
        x0.push(mu0.clamp(opts.mu_bounds[0], opts.mu_bounds[1]));
        lower.push(opts.mu_bounds[0]);
        upper.push(opts.mu_bounds[1]);
        names.push("mu".into());
    }
    let bounds = Bounds::new(lower, upper)?;
    let layout = Layout { r, opts, mu_fixed: mu0 };
    let objective = |x: &[f64]| {
        layout
            .spec(x, &fixed)
            .and_then(|s| kalman_filter(&s, &fixed.log_prices))
            .map_or(f64::INFINITY, |o| -o.loglik)
    };
    let s = &opts.search;
    let search = multi_start(&objective, &x0, &bounds, s.extra_starts, s.seed, &s.bfgs)?;
    let spec = layout.spec(&search.best.x, &fixed)?;
    let out = kalman_filter(&spec, &fixed.log_prices)?;
    let (params, sd, mu) = layout.unpack(&search.best.x)?;
    let states = fixed
        .times
        .iter()
        .zip(&out.states)
        .map(|(&time, x)| FittedState {
            time,
            log_spot: x[0],
            convenience_yield: x[1],
            carried: false,
        })
        .collect();
    let mut result = CalibrationResult {
        method: CalibrationMethod::Kalman,
        params,
        rate: r,
        mu: Some(mu),
        dt: Some(opts.dt),
        maturities: Some(fixed.maturities.clone()),
        measurement_sd: Some(sd),
        states,
        goodness: Goodness {
            sse: None,
            loglik: Some(out.loglik),
            log_rmse: 0.0,
            n_obs: fixed.times.len() * p,
        },
        diagnostics: Diagnostics {
            starts: search.starts.len(),
            best_start: search.best_start,
            iterations: search.best.iterations,
            evaluations: search.starts.iter().map(|s| s.evaluations).sum(),
            converged: search.best.converged,
            bound_hits: bound_hits(&names, &bounds, &search.best.x),
            skipped_dates: vec![],
        },
    };
    result.goodness.log_rmse = result.log_rmse_on(&fixed.to_panel()?)?;
    Ok(result)
}
