//! Fish-farm biology and cost curves.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::TimeGrid;

/// Biology and cost constants of a single harvesting cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmParams {
    /// Bertalanffy factor `a`.
    pub a: f64,
    /// Bertalanffy factor `b`.
    pub b: f64,
    /// Bertalanffy rate `c` (1/year).
    pub c: f64,
    /// Asymptotic weight (kg).
    pub w_inf: f64,
    /// Continuous mortality rate (1/year).
    pub mortality: f64,
    /// Feed conversion (kg feed per kg fish).
    pub conversion: f64,
    /// Number of smolt released at t = 0.
    pub recruits: f64,
    /// Horizon T (years).
    pub horizon: f64,
    /// Harvesting dates N.
    pub harvest_dates: usize,
    /// Market salmon spot Ŝ₀ (NOK/kg).
    pub spot_market: f64,
    /// Production costs PC (NOK/kg).
    pub production_cost: f64,
    /// Harvesting costs H₀ (NOK/kg).
    pub harvest_cost: f64,
    /// Initial feeding cost F₀.
    pub feed_cost: f64,
}

impl FarmParams {
    /// The reference farm for a given market spot: PC = Ŝ₀/2, H₀ = 0.1·PC,
    /// F₀ = 0.25·PC.
    pub fn reference(spot_market: f64) -> Self {
        let pc = 0.5 * spot_market;
        Self {
            a: 1.113,
            b: 1.097,
            c: 1.43,
            w_inf: 6.0,
            mortality: 0.1,
            conversion: 1.1,
            recruits: 10_000.0,
            horizon: 3.0,
            harvest_dates: 72,
            spot_market,
            production_cost: pc,
            harvest_cost: 0.1 * pc,
            feed_cost: 0.25 * pc,
        }
    }

    /// Sets F₀ to `share`·PC. The model salmon value follows through
    /// [`FarmParams::initial_salmon_value`].
    pub fn with_feed_share(mut self, share: f64) -> Self {
        self.feed_cost = share * self.production_cost;
        self
    }

    /// Model initial salmon value `Ŝ₀ - PC + H₀ + F₀`.
    pub fn initial_salmon_value(&self) -> f64 {
        self.spot_market - self.production_cost + self.harvest_cost + self.feed_cost
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.harvest_dates)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("w_inf", self.w_inf),
            ("conversion", self.conversion),
            ("recruits", self.recruits),
            ("horizon", self.horizon),
            ("spot_market", self.spot_market),
        ];
        for (name, v) in positive {
            ensure(v > 0.0 && v.is_finite(), || format!("{name} must be positive, got {v}"))?;
        }
        let nonneg = [
            ("mortality", self.mortality),
            ("production_cost", self.production_cost),
            ("harvest_cost", self.harvest_cost),
            ("feed_cost", self.feed_cost),
        ];
        for (name, v) in nonneg {
            ensure(v >= 0.0 && v.is_finite(), || format!("{name} must be >= 0, got {v}"))?;
        }
        ensure(self.a > self.b, || {
            format!("a ({}) must exceed b ({}) for positive weight", self.a, self.b)
        })?;
        ensure(self.harvest_dates >= 1, || "harvest_dates must be >= 1".into())?;
        Ok(())
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("time must be >= 0, got {t}")))
        }
    }

    /// Bertalanffy weight per fish (kg).
    pub fn weight(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(self.weight_unchecked(t))
    }

    /// Growth rate per fish (kg/year).
    pub fn weight_rate(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(self.weight_rate_unchecked(t))
    }

    pub fn population(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(self.population_unchecked(t))
    }

    /// Total biomass (kg).
    pub fn biomass(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(self.population_unchecked(t) * self.weight_unchecked(t))
    }

    /// Total harvesting cost `H₀·B(t)` (NOK).
    pub fn harvest_cost_total(&self, t: f64) -> Result<f64> {
        Ok(self.harvest_cost * self.biomass(t)?)
    }

    /// Feed consumed per year, `n(t)·w'(t)·conversion` (kg feed/year).
    pub fn feed_rate(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(self.population_unchecked(t) * self.weight_rate_unchecked(t) * self.conversion)
    }

    fn weight_unchecked(&self, t: f64) -> f64 {
        let g = self.a - self.b * (-self.c * t).exp();
        self.w_inf * g * g * g
    }

    fn weight_rate_unchecked(&self, t: f64) -> f64 {
        let e = (-self.c * t).exp();
        let g = self.a - self.b * e;
        3.0 * self.w_inf * g * g * self.b * self.c * e
    }

    fn population_unchecked(&self, t: f64) -> f64 {
        self.recruits * (-self.mortality * t).exp()
    }
}

/// Biology evaluated on every grid date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurves {
    pub times: Vec<f64>,
    pub weight: Vec<f64>,
    pub population: Vec<f64>,
    pub biomass: Vec<f64>,
    pub harvest_cost: Vec<f64>,
    /// `n(t_k)·w'(t_k)·conversion`.
    pub feed_rate: Vec<f64>,
}

impl CostCurves {
    pub fn new(fp: &FarmParams, grid: &TimeGrid) -> Result<Self> {
        fp.validate()?;
        let times = grid.times();
        let weight = times.iter().map(|&t| fp.weight_unchecked(t)).collect::<Vec<_>>();
        let population = times.iter().map(|&t| fp.population_unchecked(t)).collect::<Vec<_>>();
        let biomass: Vec<f64> = population.iter().zip(&weight).map(|(n, w)| n * w).collect();
        let harvest_cost = biomass.iter().map(|b| fp.harvest_cost * b).collect();
        let feed_rate = times
            .iter()
            .zip(&population)
            .map(|(&t, n)| n * fp.weight_rate_unchecked(t) * fp.conversion)
            .collect();
        Ok(Self {
            times,
            weight,
            population,
            biomass,
            harvest_cost,
            feed_rate,
        })
    }
}

/// Where the discount factor sits in the cumulative feed-cost integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountReading {
    /// `∫₀ᵗ e^{-rs} F_s g(s) ds`: each feed payment discounted when paid.
    #[default]
    Integrand,
    /// `e^{-rt} ∫₀ᵗ F_s g(s) ds`: the accrued total discounted from `t`.
    Literal,
}

/// Precomputed quadrature weights for cumulative feed costs on a grid.
///
/// `CF(t_k) = Σ_{j<k} ½Δt (w_j f_j + w_{j+1} f_{j+1})` with `w_j` the
/// discounted feed rate and `f_j` the feed price factor `F_{t_j}/F₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedQuadrature {
    node_weight: Vec<f64>,
    outer_discount: Vec<f64>,
    half_dt: f64,
}

impl FeedQuadrature {
    pub fn new(fp: &FarmParams, r: f64, grid: &TimeGrid, curves: &CostCurves, reading: DiscountReading) -> Self {
        let times = grid.times();
        let node_weight = times
            .iter()
            .zip(&curves.feed_rate)
            .map(|(&t, g)| {
                let d = match reading {
                    DiscountReading::Integrand => (-r * t).exp(),
                    DiscountReading::Literal => 1.0,
                };
                d * fp.feed_cost * g
            })
            .collect();
        let outer_discount = times
            .iter()
            .map(|&t| match reading {
                DiscountReading::Integrand => 1.0,
                DiscountReading::Literal => (-r * t).exp(),
            })
            .collect();
        Self {
            node_weight,
            outer_discount,
            half_dt: 0.5 * grid.dt(),
        }
    }

    pub fn len(&self) -> usize {
        self.node_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_weight.is_empty()
    }

    /// Writes `CF(t_k)` for every date into `out`; `factor(k)` is the feed
    /// price factor at date `k`.
    #[inline]
    pub fn accumulate(&self, factor: impl Fn(usize) -> f64, out: &mut [f64]) {
        let mut acc = 0.0;
        let mut prev = self.node_weight[0] * factor(0);
        out[0] = 0.0;
        for k in 1..self.node_weight.len() {
            let cur = self.node_weight[k] * factor(k);
            acc += self.half_dt * (prev + cur);
            out[k] = self.outer_discount[k] * acc;
            prev = cur;
        }
    }
}

/// Discounted cumulative feeding cost `CF(t_k)` for every grid date.
pub fn cumulative_feed_cost(
    fp: &FarmParams,
    r: f64,
    feed_factor: &[f64],
    grid: &TimeGrid,
    reading: DiscountReading,
) -> Result<Vec<f64>> {
    if feed_factor.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: feed_factor.len(),
        });
    }
    if let Some((k, f)) = feed_factor.iter().enumerate().find(|(_, f)| !(**f >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "feed factor at date {k} must be >= 0, got {f}"
        )));
    }
    let curves = CostCurves::new(fp, grid)?;
    let quad = FeedQuadrature::new(fp, r, grid, &curves, reading);
    let mut out = vec![0.0; grid.len()];
    quad.accumulate(|k| feed_factor[k], &mut out);
    Ok(out)
}
