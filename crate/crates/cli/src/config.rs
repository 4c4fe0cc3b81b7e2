//! Run configuration, read from TOML. Every section and key is optional;
//! unknown keys are rejected. Command-line flags override the file.

use std::path::Path;

use feedrisk_core::calibration::KalmanOptions;
use feedrisk_core::experiments::{Cell, GridConfig, ScenarioGrid};
use feedrisk_core::{CommodityParams, DiscountReading, FeedMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stream in a run derives from it.
    pub seed: u64,
    pub grid: ScenarioGrid,
    pub experiment: ExperimentConfig,
    pub simulate: SimulateConfig,
    pub value: ValueConfig,
    pub calibrate: CalibrateConfig,
    pub sensitivity: SensitivityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            grid: ScenarioGrid::reference(),
            experiment: ExperimentConfig::default(),
            simulate: SimulateConfig::default(),
            value: ValueConfig::default(),
            calibrate: CalibrateConfig::default(),
            sensitivity: SensitivityConfig::default(),
        }
    }
}

/// Path counts, classifier settings and objective conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub m_train: usize,
    pub m_valid: usize,
    /// Paths labeled by the LSMC rule for classifier training.
    pub m_classifier: usize,
    pub classifiers: bool,
    pub accuracy: bool,
    pub train: TrainConfig,
    /// `integrand` discounts each feed payment when paid; `literal` applies
    /// `e^{-rt}` to the whole accrued cost.
    pub discount_reading: DiscountReading,
    /// Allow harvesting at t = 0.
    pub exercise_at_zero: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            m_train: g.m_train,
            m_valid: g.m_valid,
            m_classifier: g.m_classifier,
            classifiers: g.classifiers,
            accuracy: g.accuracy,
            train: g.train,
            discount_reading: g.reading,
            exercise_at_zero: g.exercise_at_zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Commodity {
    Salmon,
    Soy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub salmon: String,
    pub soy: String,
    pub n_paths: usize,
    /// Also write every simulated state.
    pub write_paths: bool,
    /// Number of daily dates of a synthetic futures panel; 0 writes none.
    pub panel_dates: usize,
    pub panel_commodity: Commodity,
    pub panel_maturities: Vec<f64>,
    pub panel_noise_sd: f64,
    /// Spot drift of the panel's state transition; the rate when absent.
    pub panel_mu: Option<f64>,
    pub panel_start: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            salmon: "down down".into(),
            soy: "medium vol".into(),
            n_paths: 10_000,
            write_paths: false,
            panel_dates: 0,
            panel_commodity: Commodity::Soy,
            panel_maturities: KalmanOptions::default().maturities,
            panel_noise_sd: 0.005,
            panel_mu: None,
            panel_start: "2006-01-02".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueConfig {
    pub salmon: String,
    pub soy: String,
    pub mode: FeedMode,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            salmon: "down down".into(),
            soy: "medium vol".into(),
            mode: FeedMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub rate: f64,
    /// Starting parameters of the search.
    pub init: CommodityParams,
    /// Filter settings; `kalman.search` also drives the cross-sectional fit.
    pub kalman: KalmanOptions,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            rate: ScenarioGrid::reference().rate,
            init: CommodityParams::new(0.3, 0.3, 1.0, 0.0, 0.1, 0.3).expect("valid starting parameters"),
            kalman: KalmanOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub salmon: String,
    pub soy: String,
    /// Initial feed cost as fractions of the production cost.
    pub shares: Vec<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            salmon: "down up".into(),
            soy: "medium vol".into(),
            shares: vec![0.25, 0.5],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid_config(&self) -> GridConfig {
        let e = &self.experiment;
        GridConfig {
            m_train: e.m_train,
            m_valid: e.m_valid,
            m_classifier: e.m_classifier,
            seed: self.seed,
            classifiers: e.classifiers,
            accuracy: e.accuracy,
            train: e.train,
            reading: e.discount_reading,
            exercise_at_zero: e.exercise_at_zero,
        }
    }

    /// Checks everything that does not need data.
    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed must be <= {}", i64::MAX)));
        }
        self.grid.validate()?;
        self.grid_config().validate()?;
        if self.simulate.n_paths == 0 {
            return Err(CliError::Config("simulate.n_paths must be >= 1".into()));
        }
        if chrono::NaiveDate::parse_from_str(&self.simulate.panel_start, "%Y-%m-%d").is_err() {
            return Err(CliError::Config(format!(
                "simulate.panel_start '{}' is not YYYY-MM-DD",
                self.simulate.panel_start
            )));
        }
        if self.simulate.panel_dates > 0 && self.simulate.panel_maturities.is_empty() {
            return Err(CliError::Config("simulate.panel_maturities is empty".into()));
        }
        if !(self.simulate.panel_noise_sd >= 0.0) {
            return Err(CliError::Config("simulate.panel_noise_sd must be >= 0".into()));
        }
        if let Some(s) = self.sensitivity.shares.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(CliError::Config(format!(
                "sensitivity shares must lie in (0, 1), got {s}"
            )));
        }
        if !self.calibrate.rate.is_finite() {
            return Err(CliError::Config("calibrate.rate must be finite".into()));
        }
        self.calibrate.init.validate()?;
        Ok(())
    }

    pub fn cell(&self, salmon: &str, soy: &str) -> Result<Cell> {
        Ok(self.grid.find(salmon, soy)?)
    }
}
