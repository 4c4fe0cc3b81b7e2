//! Nested least squares: closed-form per-date states inside an outer search
//! over the commodity parameters.

use rayon::prelude::*;

use super::optimize::multi_start;
use super::{
    bound_hits, CalibrationMethod, CalibrationResult, Diagnostics, FittedState, FuturesPanel, Goodness, SearchOptions,
    PARAM_NAMES,
};
use crate::error::{Error, Result};
use crate::model::CommodityParams;

/// Per-date least-squares fit of (log spot, convenience yield).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerFit {
    pub log_spot: f64,
    pub convenience_yield: f64,
    pub sse: f64,
}

/// Fits the states of one date from `(ttm, price)` quotes.
pub fn cortazar_inner(params: &CommodityParams, r: f64, quotes: &[super::Quote]) -> Result<InnerFit> {
    let ttms: Vec<f64> = quotes.iter().map(|q| q.ttm).collect();
    let logs: Vec<f64> = quotes.iter().map(|q| q.price.ln()).collect();
    cortazar_inner_logs(params, r, &ttms, &logs)
}

/// As [`cortazar_inner`] with log prices given directly.
///
/// `log F_j - a_j = s - δ b_j` is affine in `(s, δ)`, so the minimizer is a
/// simple linear regression of `log F_j - a_j` on `-b_j`.
pub fn cortazar_inner_logs(params: &CommodityParams, r: f64, ttms: &[f64], logs: &[f64]) -> Result<InnerFit> {
    if ttms.len() != logs.len() {
        return Err(Error::DimensionMismatch {
            expected: ttms.len(),
            got: logs.len(),
        });
    }
    let n = ttms.len();
    if n < 2 {
        return Err(Error::Underdetermined(format!(
            "{n} quote(s); two distinct maturities are needed"
        )));
    }
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for (&t, &l) in ttms.iter().zip(logs) {
        let ld = params.loadings(r, t);
        x.push(-ld.b);
        z.push(l - ld.a);
    }
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let zm = z.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxz = 0.0;
    let mut scale = 0.0;
    for (xi, zi) in x.iter().zip(&z) {
        sxx += (xi - xm).powi(2);
        sxz += (xi - xm) * (zi - zm);
        scale += xi * xi;
    }
    if !(sxx > 1e-24 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Underdetermined(
            "all maturities load identically on the convenience yield".into(),
        ));
    }
    let delta = sxz / sxx;
    let s = zm - delta * xm;
    let sse = x.iter().zip(&z).map(|(xi, zi)| (zi - s - delta * xi).powi(2)).sum();
    Ok(InnerFit {
        log_spot: s,
        convenience_yield: delta,
        sse,
    })
}

struct Prepared {
    ttms: Vec<Vec<f64>>,
    logs: Vec<Vec<f64>>,
    identified: Vec<bool>,
}

fn prepare(panel: &FuturesPanel) -> Prepared {
    let ttms: Vec<Vec<f64>> = panel
        .dates()
        .iter()
        .map(|d| d.quotes.iter().map(|q| q.ttm).collect())
        .collect();
    let logs = panel
        .dates()
        .iter()
        .map(|d| d.quotes.iter().map(|q| q.price.ln()).collect())
        .collect();
    // b(τ) is strictly increasing for κ > 0, so identification depends only
    // on the number of distinct maturities
    let identified = ttms.iter().map(|t: &Vec<f64>| t.iter().any(|&v| v != t[0])).collect();
    Prepared { ttms, logs, identified }
}

fn total_sse(prep: &Prepared, params: &CommodityParams, r: f64) -> f64 {
    let per_date: Vec<f64> = (0..prep.ttms.len())
        .into_par_iter()
        .map(|i| {
            if !prep.identified[i] {
                return 0.0;
            }
            cortazar_inner_logs(params, r, &prep.ttms[i], &prep.logs[i]).map_or(f64::INFINITY, |f| f.sse)
        })
        .collect();
    per_date.iter().sum()
}

/// States for every date at fixed parameters; unidentified dates keep the
/// yield of the nearest earlier identified date (or the first one) and fit
/// the spot alone.
fn states_at(
    prep: &Prepared,
    panel: &FuturesPanel,
    params: &CommodityParams,
    r: f64,
) -> Result<(Vec<FittedState>, f64)> {
    let fits: Vec<Option<InnerFit>> = (0..prep.ttms.len())
        .map(|i| {
            prep.identified[i]
                .then(|| cortazar_inner_logs(params, r, &prep.ttms[i], &prep.logs[i]))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let first = fits
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Underdetermined("no date quotes two distinct maturities".into()))?
        .convenience_yield;
    let mut carry = first;
    let mut sse = 0.0;
    let mut states = Vec::with_capacity(fits.len());
    for (i, (fit, d)) in fits.iter().zip(panel.dates()).enumerate() {
        let state = match fit {
            Some(f) => {
                carry = f.convenience_yield;
                sse += f.sse;
                FittedState {
                    time: d.time,
                    log_spot: f.log_spot,
                    convenience_yield: f.convenience_yield,
                    carried: false,
                }
            }
            None => {
                let n = prep.ttms[i].len() as f64;
                let s = prep.ttms[i]
                    .iter()
                    .zip(&prep.logs[i])
                    .map(|(&t, &l)| {
                        let ld = params.loadings(r, t);
                        l - ld.a + carry * ld.b
                    })
                    .sum::<f64>()
                    / n;
                FittedState {
                    time: d.time,
                    log_spot: s,
                    convenience_yield: carry,
                    carried: true,
                }
            }
        };
        states.push(state);
    }
    Ok((states, sse))
}

/// Minimizes the total squared log-price error over the parameters, with the
/// states of each date solved exactly for every trial parameter vector.
pub fn cortazar_calibrate(
    panel: &FuturesPanel,
    r: f64,
    init: &CommodityParams,
    opts: &SearchOptions,
) -> Result<CalibrationResult> {
    if !r.is_finite() {
        return Err(Error::InvalidParameter(format!("rate must be finite, got {r}")));
    }
    let bounds = opts.param_box()?;
    let x0 = opts.start(init)?;
    let prep = prepare(panel);
    if !prep.identified.iter().any(|&b| b) {
        return Err(Error::Underdetermined("no date quotes two distinct maturities".into()));
    }
    let signed = opts.signed_premium;
    let objective = |x: &[f64]| match CommodityParams::from_vector(x, signed) {
        Ok(p) => total_sse(&prep, &p, r),
        Err(_) => f64::INFINITY,
    };
    let search = multi_start(&objective, &x0, &bounds, opts.extra_starts, opts.seed, &opts.bfgs)?;
    let params = CommodityParams::from_vector(&search.best.x, signed)?;
    let (states, sse) = states_at(&prep, panel, &params, r)?;
    let names: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    let mut result = CalibrationResult {
        method: CalibrationMethod::Cortazar,
        params,
        rate: r,
        mu: None,
        dt: None,
        maturities: None,
        measurement_sd: None,
        states,
        goodness: Goodness {
            sse: Some(sse),
            loglik: None,
            log_rmse: 0.0,
            n_obs: panel.n_quotes(),
        },
        diagnostics: Diagnostics {
            starts: search.starts.len(),
            best_start: search.best_start,
            iterations: search.best.iterations,
            evaluations: search.starts.iter().map(|s| s.evaluations).sum(),
            converged: search.best.converged,
            bound_hits: bound_hits(&names, &bounds, &search.best.x),
            skipped_dates: (0..prep.identified.len()).filter(|&i| !prep.identified[i]).collect(),
        },
    };
    result.goodness.log_rmse = result.log_rmse_on(panel)?;
    if !result.goodness.log_rmse.is_finite() || !sse.is_finite() {
        return Err(Error::Numerical("calibrated fit is not finite".into()));
    }
    Ok(result)
}
