//! The harvesting objective: discounted harvest value net of discounted
//! cumulative feeding costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farm::{CostCurves, DiscountReading, FarmParams, FeedQuadrature};
use crate::model::{expected_relative_price, CommoditySpec, PathSet, TimeGrid};

/// How feed prices enter the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedModel {
    /// Feed price factor follows its risk-neutral expectation `E[S̃²_t]`.
    Deterministic { factors: Vec<f64> },
    /// Feed price factor is the simulated relative soy price `S²_t / S²_0`.
    Stochastic,
}

impl FeedModel {
    /// Deterministic feed factors from the soy model's expected relative price.
    pub fn expected(soy: &CommoditySpec, r: f64, grid: &TimeGrid) -> Result<Self> {
        let factors = grid
            .times()
            .into_iter()
            .map(|t| expected_relative_price(&soy.params, r, &soy.init, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Deterministic { factors })
    }

    pub fn mode(&self) -> FeedMode {
        match self {
            FeedModel::Deterministic { .. } => FeedMode::Deterministic,
            FeedModel::Stochastic => FeedMode::Stochastic,
        }
    }
}

/// Feed-cost regime a rule was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedMode {
    Deterministic,
    Stochastic,
}

impl FeedMode {
    /// State dimension the rule conditions on.
    pub fn state_dim(self) -> usize {
        match self {
            FeedMode::Deterministic => 2,
            FeedMode::Stochastic => 4,
        }
    }
}

/// Farm, rate and conventions for one harvesting problem, with the
/// per-date curves precomputed.
#[derive(Debug, Clone)]
pub struct HarvestProblem {
    farm: FarmParams,
    r: f64,
    grid: TimeGrid,
    reading: DiscountReading,
    exercise_at_zero: bool,
    curves: CostCurves,
    quadrature: FeedQuadrature,
    discount: Vec<f64>,
}

impl HarvestProblem {
    pub fn new(farm: FarmParams, r: f64) -> Result<Self> {
        Self::with_conventions(farm, r, DiscountReading::Integrand, false)
    }

    pub fn with_conventions(
        farm: FarmParams,
        r: f64,
        reading: DiscountReading,
        exercise_at_zero: bool,
    ) -> Result<Self> {
        farm.validate()?;
        if !r.is_finite() {
            return Err(Error::InvalidParameter(format!("rate must be finite, got {r}")));
        }
        let grid = farm.grid()?;
        let curves = CostCurves::new(&farm, &grid)?;
        let quadrature = FeedQuadrature::new(&farm, r, &grid, &curves, reading);
        let discount = grid.times().iter().map(|t| (-r * t).exp()).collect();
        Ok(Self {
            farm,
            r,
            grid,
            reading,
            exercise_at_zero,
            curves,
            quadrature,
            discount,
        })
    }

    pub fn farm(&self) -> &FarmParams {
        &self.farm
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn discount_reading(&self) -> DiscountReading {
        self.reading
    }

    pub fn exercise_at_zero(&self) -> bool {
        self.exercise_at_zero
    }

    pub fn curves(&self) -> &CostCurves {
        &self.curves
    }

    /// `e^{-r t_k}(S¹ B(t_k) - CH(t_k))`.
    #[inline]
    pub fn harvest_value(&self, k: usize, salmon_spot: f64) -> f64 {
        self.discount[k] * (salmon_spot * self.curves.biomass[k] - self.curves.harvest_cost[k])
    }

    /// Cumulative discounted feed costs of path `p` for every date.
    pub fn feed_costs(&self, paths: &PathSet, p: usize, feed: &FeedModel, out: &mut [f64]) {
        match feed {
            FeedModel::Deterministic { factors } => self.quadrature.accumulate(|k| factors[k], out),
            FeedModel::Stochastic => {
                let s0 = paths.spot(p, 0, 1);
                self.quadrature.accumulate(|k| paths.spot(p, k, 1) / s0, out)
            }
        }
    }

    pub(crate) fn check_paths(&self, paths: &PathSet, feed: &FeedModel) -> Result<()> {
        if paths.grid() != &self.grid {
            return Err(Error::InvalidInput(format!(
                "path grid {:?} differs from harvesting grid {:?}",
                paths.grid(),
                self.grid
            )));
        }
        match feed {
            FeedModel::Stochastic if paths.dim() != 4 => Err(Error::DimensionMismatch {
                expected: 4,
                got: paths.dim(),
            }),
            FeedModel::Deterministic { factors } if factors.len() != self.grid.len() => Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: factors.len(),
            }),
            FeedModel::Deterministic { factors } if factors.iter().any(|f| !(*f >= 0.0)) => {
                Err(Error::InvalidInput("deterministic feed factors must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}
