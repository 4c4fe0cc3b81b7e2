//! Scenario grids: relative improvements and farm values of the four
//! stopping rules per cell, the feed-share sensitivity and the
//! model-uncertainty demonstration.

mod tables;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::{
    cortazar_calibrate, kalman_calibrate, synthetic_panel, uncertainty_report, KalmanOptions, SyntheticSpec,
    UncertaintyReport,
};
use crate::classifier::{build_labeled_sets, evaluate_classifier, held_out_accuracy, train, DateAccuracy, TrainConfig};
use crate::error::{Error, Result};
use crate::farm::{DiscountReading, FarmParams};
use crate::lsmc::{
    compare_outcomes, evaluate, mean_and_se, solve, FeedMode, FeedModel, HarvestProblem, StoppingOutcome,
};
use crate::model::{simulate_pair, CommodityParams, CommoditySpec, CommodityState};
use crate::rng;

pub use tables::{cells_csv, sensitivity_csv, table4_csv, table5_csv};

/// A named parameter set for one commodity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub params: CommodityParams,
}

/// Salmon scenarios crossed with soy scenarios on one farm. Missing fields
/// take their reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioGrid {
    pub salmon: Vec<Scenario>,
    pub soy: Vec<Scenario>,
    /// Initial salmon convenience yield. The initial spot comes from the farm.
    pub salmon_yield: f64,
    /// Initial soy state, with the spot relative to its time-0 level.
    pub soy_init: CommodityState,
    /// Soy quote level in currency units, used only by calibration demos.
    pub soy_quote_level: f64,
    pub farm: FarmParams,
    pub rate: f64,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self::reference()
    }
}

impl ScenarioGrid {
    /// Three salmon risk premia crossed with three soy volatilities.
    pub fn reference() -> Self {
        let salmon = |name: &str, lambda: f64| Scenario {
            name: name.into(),
            params: CommodityParams::new(0.23, 0.75, 2.6, 0.02, lambda, 0.9).expect("valid salmon parameters"),
        };
        let soy = |name: &str, sigma1: f64| Scenario {
            name: name.into(),
            params: CommodityParams::new(sigma1, 0.4, 1.2, 0.06, 0.14, 0.44).expect("valid soy parameters"),
        };
        Self {
            salmon: vec![salmon("down down", 0.01), salmon("down up", 0.2), salmon("up up", 0.6)],
            soy: vec![soy("low vol", 0.5), soy("medium vol", 1.0), soy("high vol", 2.0)],
            salmon_yield: 0.57,
            soy_init: CommodityState::new(1.0, 0.0),
            soy_quote_level: 1500.0,
            farm: FarmParams::reference(95.0),
            rate: 0.0303,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.salmon.is_empty() || self.soy.is_empty() {
            return Err(Error::InvalidInput(
                "scenario grid needs at least one salmon and one soy scenario".into(),
            ));
        }
        for s in self.salmon.iter().chain(&self.soy) {
            s.params.validate()?;
        }
        for (list, what) in [(&self.salmon, "salmon"), (&self.soy, "soy")] {
            for (i, s) in list.iter().enumerate() {
                if list[..i].iter().any(|o| o.name == s.name) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate {what} scenario name '{}'",
                        s.name
                    )));
                }
            }
        }
        if !(self.soy_init.spot > 0.0) || !(self.soy_quote_level > 0.0) || !self.salmon_yield.is_finite() {
            return Err(Error::InvalidParameter(
                "initial states must be finite with positive spots".into(),
            ));
        }
        if !self.rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rate must be finite, got {}",
                self.rate
            )));
        }
        self.farm.validate()
    }

    /// Cell coordinates `(salmon, soy)`, soy-major as in the tables.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        (0..self.soy.len())
            .flat_map(|j| (0..self.salmon.len()).map(move |i| (i, j)))
            .collect()
    }

    pub fn cell(&self, salmon: usize, soy: usize) -> Result<Cell> {
        let (sa, so) = self
            .salmon
            .get(salmon)
            .zip(self.soy.get(soy))
            .ok_or_else(|| Error::InvalidInput(format!("no cell ({salmon}, {soy})")))?;
        Ok(Cell {
            salmon_name: sa.name.clone(),
            soy_name: so.name.clone(),
            salmon: CommoditySpec {
                params: sa.params,
                init: CommodityState::new(self.farm.initial_salmon_value(), self.salmon_yield),
            },
            soy: CommoditySpec {
                params: so.params,
                init: self.soy_init,
            },
            farm: self.farm,
            rate: self.rate,
        })
    }

    /// The cell with the given scenario names.
    pub fn find(&self, salmon: &str, soy: &str) -> Result<Cell> {
        let i = self.salmon.iter().position(|s| s.name == salmon);
        let j = self.soy.iter().position(|s| s.name == soy);
        match (i, j) {
            (Some(i), Some(j)) => self.cell(i, j),
            _ => Err(Error::InvalidInput(format!("no cell '{salmon}' x '{soy}'"))),
        }
    }
}

/// One salmon scenario paired with one soy scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub salmon_name: String,
    pub soy_name: String,
    pub salmon: CommoditySpec,
    pub soy: CommoditySpec,
    pub farm: FarmParams,
    pub rate: f64,
}

impl Cell {
    /// The same cell with `F₀ = share·PC` and the initial salmon spot recomputed.
    pub fn with_feed_share(&self, share: f64) -> Self {
        let farm = self.farm.with_feed_share(share);
        let mut out = self.clone();
        out.salmon.init.spot = farm.initial_salmon_value();
        out.farm = farm;
        out
    }

    pub fn problem(&self, reading: DiscountReading, exercise_at_zero: bool) -> Result<HarvestProblem> {
        HarvestProblem::with_conventions(self.farm, self.rate, reading, exercise_at_zero)
    }

    pub fn seeds(&self, master: u64) -> CellSeeds {
        let cell = rng::derive_seed_str(master, &format!("{}|{}", self.salmon_name, self.soy_name));
        CellSeeds {
            cell,
            training: rng::derive_seed(cell, 1),
            validation: rng::derive_seed(cell, 2),
            classifier: rng::derive_seed(cell, 3),
            classifier_paths: rng::derive_seed(cell, 4),
        }
    }
}

/// Seeds of one cell, all derived from the master seed and the scenario names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub cell: u64,
    pub training: u64,
    pub validation: u64,
    pub classifier: u64,
    pub classifier_paths: u64,
}

/// Settings shared by every cell of a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub m_train: usize,
    pub m_valid: usize,
    /// Paths labeled by the LSMC rules to train the classifiers on.
    pub m_classifier: usize,
    pub seed: u64,
    /// Train and evaluate the exercise classifiers.
    pub classifiers: bool,
    /// Score the classifiers against the LSMC labels on the validation paths.
    pub accuracy: bool,
    /// Classifier settings; the seed is replaced per cell.
    pub train: TrainConfig,
    pub reading: DiscountReading,
    pub exercise_at_zero: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m_train: 100_000,
            m_valid: 100_000,
            m_classifier: 1_000_000,
            seed: 2024,
            classifiers: true,
            accuracy: true,
            train: TrainConfig::default(),
            reading: DiscountReading::default(),
            exercise_at_zero: false,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_train < 2 || self.m_valid < 2 || self.m_classifier < 2 {
            return Err(Error::InvalidInput("path counts must be >= 2".into()));
        }
        if self.train.per_class == 0 {
            return Err(Error::InvalidInput("per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub v0: f64,
    pub std_err: f64,
}

impl From<&StoppingOutcome> for Estimate {
    fn from(o: &StoppingOutcome) -> Self {
        Self {
            v0: o.v0,
            std_err: o.std_err,
        }
    }
}

/// Delta-method standard error of `mean(a)/mean(b)` for paired samples.
pub fn ratio_std_err(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_and_se(a);
    let (mb, _) = mean_and_se(b);
    let ratio = ma / mb;
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - ratio * y).collect();
    mean_and_se(&resid).1 / mb.abs()
}

/// Where the stochastic LSMC rule stops relative to the deterministic one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopComparison {
    pub frac_stoch_earlier: f64,
    pub frac_same: f64,
    pub frac_stoch_later: f64,
    pub mean_stop_det: f64,
    pub mean_stop_stoch: f64,
}

/// Values of one cell. Out-of-sample values are on the shared validation
/// paths under stochastic feed costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValues {
    pub tau_det: Estimate,
    pub tau_stoch: Estimate,
    pub f_det: Option<Estimate>,
    pub f_stoch: Option<Estimate>,
    /// `tau_stoch.v0 / tau_det.v0`.
    pub ri_tau: f64,
    pub se_ri_tau: f64,
    pub ri_f: Option<f64>,
    pub se_ri_f: Option<f64>,
    /// In-sample values of the LSMC rules under their own feed model.
    pub in_sample_det: Estimate,
    pub in_sample_stoch: Estimate,
    pub stops: StopComparison,
    pub accuracy_det: Option<Vec<DateAccuracy>>,
    pub accuracy_stoch: Option<Vec<DateAccuracy>>,
}

impl CellValues {
    /// `|V₀(f) - V₀(τ)| / V₀(τ)` for the classifier of `mode`.
    pub fn classifier_gap(&self, mode: FeedMode) -> Option<f64> {
        let (f, tau) = match mode {
            FeedMode::Deterministic => (self.f_det, self.tau_det),
            FeedMode::Stochastic => (self.f_stoch, self.tau_stoch),
        };
        f.map(|f| (f.v0 - tau.v0).abs() / tau.v0.abs())
    }

    /// Lowest held-out balanced accuracy over the dates with both classes.
    pub fn min_balanced_accuracy(&self, mode: FeedMode) -> Option<f64> {
        let acc = match mode {
            FeedMode::Deterministic => self.accuracy_det.as_ref(),
            FeedMode::Stochastic => self.accuracy_stoch.as_ref(),
        }?;
        acc.iter().filter_map(|a| a.balanced_accuracy).reduce(f64::min)
    }
}

/// Wall-clock seconds per stage; reported in JSON only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtimes {
    pub simulate: f64,
    pub lsmc: f64,
    pub classifiers: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub salmon: String,
    pub soy: String,
    pub seeds: CellSeeds,
    pub values: Option<CellValues>,
    /// Set when the cell failed; the other cells are unaffected.
    pub error: Option<String>,
    pub runtimes: Runtimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub grid: ScenarioGrid,
    pub config: GridConfig,
    /// Soy-major, matching [`ScenarioGrid::coordinates`].
    pub cells: Vec<CellReport>,
}

impl GridReport {
    pub fn cell(&self, salmon: &str, soy: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.salmon == salmon && c.soy == soy)
    }
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs one cell: simulation, both LSMC solves, both classifiers trained on
/// a separate labeled set, and the out-of-sample evaluation of all four rules
/// on shared validation paths.
pub fn run_cell(cell: &Cell, cfg: &GridConfig) -> CellReport {
    let seeds = cell.seeds(cfg.seed);
    let mut runtimes = Runtimes::default();
    let outcome = cell_values(cell, cfg, &seeds, &mut runtimes);
    let (values, error) = match outcome {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellReport {
        salmon: cell.salmon_name.clone(),
        soy: cell.soy_name.clone(),
        seeds,
        values,
        error,
        runtimes,
    }
}

fn cell_values(cell: &Cell, cfg: &GridConfig, seeds: &CellSeeds, rt: &mut Runtimes) -> Result<CellValues> {
    cfg.validate()?;
    let problem = cell.problem(cfg.reading, cfg.exercise_at_zero)?;
    let grid = *problem.grid();

    let t = Instant::now();
    let train_paths = simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, cfg.m_train, seeds.training)?;
    let det_paths = train_paths.first_commodity();
    let fresh = simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, cfg.m_valid, seeds.validation)?;
    rt.simulate = elapsed(t);

    let t = Instant::now();
    let det_feed = FeedModel::expected(&cell.soy, cell.rate, &grid)?;
    let (det_rule, det_in) = solve(&det_paths, &problem, &det_feed)?;
    drop(det_paths);
    let (stoch_rule, stoch_in) = solve(&train_paths, &problem, &FeedModel::Stochastic)?;
    drop(train_paths);
    rt.lsmc = elapsed(t);

    let t = Instant::now();
    let tau_det = evaluate(&det_rule, &fresh, &problem)?;
    let tau_stoch = evaluate(&stoch_rule, &fresh, &problem)?;
    rt.evaluate = elapsed(t);

    let mut values = CellValues {
        tau_det: (&tau_det).into(),
        tau_stoch: (&tau_stoch).into(),
        f_det: None,
        f_stoch: None,
        ri_tau: tau_stoch.v0 / tau_det.v0,
        se_ri_tau: ratio_std_err(&tau_stoch.values, &tau_det.values),
        ri_f: None,
        se_ri_f: None,
        in_sample_det: (&det_in).into(),
        in_sample_stoch: (&stoch_in).into(),
        stops: {
            let c = compare_outcomes(&tau_stoch, &tau_det);
            StopComparison {
                frac_stoch_earlier: c.frac_a_earlier,
                frac_same: c.frac_same,
                frac_stoch_later: c.frac_a_later,
                mean_stop_det: tau_det.mean_stop_index(),
                mean_stop_stoch: tau_stoch.mean_stop_index(),
            }
        },
        accuracy_det: None,
        accuracy_stoch: None,
    };
    if !cfg.classifiers {
        return Ok(values);
    }

    let t = Instant::now();
    let train_cfg = |mode: u64| TrainConfig {
        seed: rng::derive_seed(seeds.classifier, mode),
        ..cfg.train
    };
    // Each rule labels its own stopping decisions on a separate, larger set.
    // The deterministic labels only read the salmon components of the pair.
    let labeled = simulate_pair(
        &cell.salmon,
        &cell.soy,
        cell.rate,
        &grid,
        cfg.m_classifier,
        seeds.classifier_paths,
    )?;
    let det_stops = evaluate(&det_rule, &labeled, &problem)?;
    let det_sets = build_labeled_sets(&labeled, &det_stops, 2)?;
    drop(det_stops);
    let f_det_rule = train(&labeled, &det_sets, FeedMode::Deterministic, &train_cfg(0))?;
    drop(det_sets);
    let stoch_stops = evaluate(&stoch_rule, &labeled, &problem)?;
    let stoch_sets = build_labeled_sets(&labeled, &stoch_stops, 4)?;
    drop(stoch_stops);
    let f_stoch_rule = train(&labeled, &stoch_sets, FeedMode::Stochastic, &train_cfg(1))?;
    drop(stoch_sets);
    drop(labeled);
    rt.classifiers = elapsed(t);

    let t = Instant::now();
    let f_det = evaluate_classifier(&f_det_rule, &fresh, &problem)?;
    let f_stoch = evaluate_classifier(&f_stoch_rule, &fresh, &problem)?;
    values.f_det = Some((&f_det).into());
    values.f_stoch = Some((&f_stoch).into());
    values.ri_f = Some(f_stoch.v0 / f_det.v0);
    values.se_ri_f = Some(ratio_std_err(&f_stoch.values, &f_det.values));
    if cfg.accuracy {
        let held = build_labeled_sets(&fresh, &tau_det, 2)?;
        values.accuracy_det = Some(held_out_accuracy(&f_det_rule, &fresh, &held)?);
        let held = build_labeled_sets(&fresh, &tau_stoch, 4)?;
        values.accuracy_stoch = Some(held_out_accuracy(&f_stoch_rule, &fresh, &held)?);
    }
    rt.evaluate += elapsed(t);
    Ok(values)
}

/// Runs every cell of `grid`. Cells run one after another, each using the
/// whole thread pool, which bounds memory to one cell's path sets.
pub fn run_grid(grid: &ScenarioGrid, cfg: &GridConfig) -> Result<GridReport> {
    grid.validate()?;
    cfg.validate()?;
    let cells = grid
        .coordinates()
        .into_iter()
        .map(|(i, j)| grid.cell(i, j).map(|c| run_cell(&c, cfg)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport {
        grid: grid.clone(),
        config: *cfg,
        cells,
    })
}

/// LSMC values of one cell at one initial feed-cost share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareResult {
    pub share: f64,
    /// `F₀` in currency per kilogram of feed.
    pub feed_cost: f64,
    pub tau_det: Option<Estimate>,
    pub tau_stoch: Option<Estimate>,
    pub ri_tau: Option<f64>,
    pub se_ri_tau: Option<f64>,
    pub error: Option<String>,
}

/// `RI^τ` of `cell` with `F₀ = share·PC` for each share. Every share reuses
/// the cell's training and validation paths up to the initial salmon spot.
pub fn feed_share_sensitivity(cell: &Cell, shares: &[f64], cfg: &GridConfig) -> Result<Vec<ShareResult>> {
    cfg.validate()?;
    if let Some(s) = shares.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::InvalidInput(format!("feed shares must lie in (0, 1), got {s}")));
    }
    let lsmc_only = GridConfig {
        classifiers: false,
        ..*cfg
    };
    Ok(shares
        .iter()
        .map(|&share| {
            let c = cell.with_feed_share(share);
            let report = run_cell(&c, &lsmc_only);
            let v = report.values.as_ref();
            ShareResult {
                share,
                feed_cost: c.farm.feed_cost,
                tau_det: v.map(|v| v.tau_det),
                tau_stoch: v.map(|v| v.tau_stoch),
                ri_tau: v.map(|v| v.ri_tau),
                se_ri_tau: v.map(|v| v.se_ri_tau),
                error: report.error,
            }
        })
        .collect())
}

/// Two calibrators fitted to one synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyDemo {
    pub synthetic: SyntheticSpec,
    /// Starting parameters of both searches.
    pub init: CommodityParams,
    pub kalman: KalmanOptions,
}

impl Default for UncertaintyDemo {
    fn default() -> Self {
        let grid = ScenarioGrid::reference();
        let kalman = KalmanOptions::default();
        Self {
            synthetic: SyntheticSpec {
                params: grid.soy[1].params,
                rate: grid.rate,
                mu: grid.rate,
                dt: kalman.dt,
                n_dates: 500,
                maturities: kalman.maturities.clone(),
                noise_sd: 0.005,
                init_log_spot: grid.soy_quote_level.ln(),
                init_convenience_yield: grid.soy_init.convenience_yield,
                seed: 7,
            },
            init: CommodityParams::new(0.3, 0.3, 1.0, 0.0, 0.1, 0.3).expect("valid starting parameters"),
            kalman,
        }
    }
}

/// Fits the Kalman (first) and cross-sectional (second) calibrators to one
/// synthetic panel and compares their fitted curves and parameters.
pub fn model_uncertainty(demo: &UncertaintyDemo) -> Result<UncertaintyReport> {
    let syn = synthetic_panel(&demo.synthetic)?;
    let r = demo.synthetic.rate;
    let kalman = kalman_calibrate(&syn.panel, r, &demo.init, &demo.kalman)?;
    let cortazar = cortazar_calibrate(&syn.panel, r, &demo.init, &demo.kalman.search)?;
    uncertainty_report(&syn.panel, &kalman, &cortazar)
}

#[cfg(test)]
mod tests;
