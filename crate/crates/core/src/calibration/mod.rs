//! Estimation of commodity parameters and latent states from futures panels.
//!
//! Two estimators are provided: a nested least-squares fit that solves the
//! per-date states in closed form inside an outer search over the parameters,
//! and Kalman-filter maximum likelihood on a fixed maturity grid.

mod cortazar;
mod kalman;
pub mod optimize;
mod panel;
mod report;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CommodityParams;
use optimize::{BfgsOptions, Bounds};

pub use cortazar::{cortazar_calibrate, cortazar_inner, cortazar_inner_logs, InnerFit};
pub use kalman::{kalman_calibrate, kalman_filter, KalmanOptions, KalmanOutput, KalmanSpec, MEASUREMENT_VAR_FLOOR};
pub use panel::{default_maturities, flat_curve_rmse, FixedPanel, FuturesPanel, PanelDate, Quote};
pub use report::{uncertainty_report, DivergenceMetrics, ReportDate, ReportQuote, UncertaintyReport};
pub use synthetic::{synthetic_panel, SyntheticPanel, SyntheticSpec};

/// Names of the entries of the parameter vector, in order.
pub const PARAM_NAMES: [&str; 6] = ["sigma1", "sigma2", "kappa", "alpha", "lambda", "rho"];

/// Box constraints on `[σ1, σ2, κ, α, λ, ρ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [1e-3, 1e-3, 1e-2, -3.0, 0.0, -0.99],
            upper: [5.0, 5.0, 10.0, 3.0, 5.0, 0.99],
        }
    }
}

impl ParamBounds {
    /// Default box with a premium range symmetric around zero.
    pub fn signed() -> Self {
        let mut b = Self::default();
        b.lower[4] = -5.0;
        b
    }

    pub fn validate(&self, signed_premium: bool) -> Result<()> {
        for i in 0..6 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{}: need finite lower < upper, got [{lo}, {hi}]",
                    PARAM_NAMES[i]
                )));
            }
        }
        let checks = [
            (self.lower[0] >= 0.0, "sigma1 lower bound must be >= 0"),
            (self.lower[1] >= 0.0, "sigma2 lower bound must be >= 0"),
            (self.lower[2] > 0.0, "kappa lower bound must be > 0"),
            (
                self.lower[5] >= -1.0 && self.upper[5] <= 1.0,
                "rho bounds must lie in [-1, 1]",
            ),
            (
                signed_premium || self.lower[4] >= 0.0,
                "lambda lower bound must be >= 0",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidParameter(msg.into()));
            }
        }
        Ok(())
    }

    fn contains(&self, p: &CommodityParams) -> bool {
        let v = p.to_vector();
        (0..6).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }
}

/// Settings of the outer parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    pub bounds: ParamBounds,
    /// Random starting points besides the initial guess.
    pub extra_starts: usize,
    pub seed: u64,
    pub bfgs: BfgsOptions,
    /// Let the premium λ take negative values.
    pub signed_premium: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            bounds: ParamBounds::default(),
            extra_starts: 4,
            seed: 0,
            bfgs: BfgsOptions::default(),
            signed_premium: false,
        }
    }
}

impl SearchOptions {
    fn param_box(&self) -> Result<Bounds> {
        self.bounds.validate(self.signed_premium)?;
        Bounds::new(self.bounds.lower.to_vec(), self.bounds.upper.to_vec())
    }

    fn start(&self, init: &CommodityParams) -> Result<Vec<f64>> {
        init.validate()?;
        if !self.bounds.contains(init) {
            return Err(Error::InvalidParameter(format!(
                "initial parameters {:?} lie outside the search bounds",
                init.to_vector()
            )));
        }
        Ok(init.to_vector().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Cortazar,
    Kalman,
}

/// Estimated latent state at one panel date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedState {
    pub time: f64,
    pub log_spot: f64,
    pub convenience_yield: f64,
    /// The date could not identify both states; the yield was carried over
    /// from the nearest identified date and only the spot was fitted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub carried: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goodness {
    /// Sum of squared log-price residuals (nested least squares).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sse: Option<f64>,
    /// Gaussian log-likelihood (Kalman filter).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    /// RMSE of fitted against observed log prices on the training panel.
    pub log_rmse: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    pub starts: usize,
    pub best_start: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Names of estimated quantities that ended within 0.1% of a bound.
    pub bound_hits: Vec<String>,
    /// Dates whose states were not identified by their own quotes.
    pub skipped_dates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    pub params: CommodityParams,
    pub rate: f64,
    /// Drift of the log spot under the historical measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Fixed maturities the filter ran on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturities: Option<Vec<f64>>,
    /// Standard deviations `d_j` of the measurement errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_sd: Option<Vec<f64>>,
    pub states: Vec<FittedState>,
    pub goodness: Goodness,
    pub diagnostics: Diagnostics,
}

impl CalibrationResult {
    /// Fitted log price for `ttm` at date `i`.
    pub fn fitted_log_price(&self, i: usize, ttm: f64) -> f64 {
        let s = &self.states[i];
        self.params
            .loadings(self.rate, ttm)
            .log_price(s.log_spot, s.convenience_yield)
    }

    /// RMSE of fitted against observed log prices over every raw quote.
    pub fn log_rmse_on(&self, panel: &FuturesPanel) -> Result<f64> {
        check_same_dates(panel, self)?;
        let mut sse = 0.0;
        for (i, d) in panel.dates().iter().enumerate() {
            for q in &d.quotes {
                sse += (self.fitted_log_price(i, q.ttm) - q.price.ln()).powi(2);
            }
        }
        Ok((sse / panel.n_quotes() as f64).sqrt())
    }
}

pub(crate) fn check_same_dates(panel: &FuturesPanel, result: &CalibrationResult) -> Result<()> {
    if panel.len() != result.states.len() {
        return Err(Error::DimensionMismatch {
            expected: panel.len(),
            got: result.states.len(),
        });
    }
    if panel.dates().iter().zip(&result.states).any(|(d, s)| d.time != s.time) {
        return Err(Error::InvalidInput("result dates differ from the panel dates".into()));
    }
    Ok(())
}

fn bound_hits(names: &[String], bounds: &Bounds, x: &[f64]) -> Vec<String> {
    bounds.hits(x, 1e-3).into_iter().map(|i| names[i].clone()).collect()
}
