//! Valuation and harvesting decisions for a salmon farm whose feed price is
//! itself a stochastic commodity.
//!
//! Salmon and soy (the feed proxy) each follow a Schwartz two-factor model.
//! The crate simulates them exactly on the harvesting grid, solves the
//! optimal harvesting problem by least-squares Monte Carlo under
//! deterministic or stochastic feed costs, learns per-date exercise
//! classifiers, calibrates the commodity models to futures panels, and runs
//! the scenario grid comparing the two feed-cost assumptions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]
pub mod calibration;
pub mod classifier;
pub mod error;
pub mod experiments;
pub mod farm;
pub mod lsmc;
pub mod model;
pub mod rng;

pub use calibration::{CalibrationResult, FuturesPanel};
pub use classifier::{ClassifierRule, LabeledSets, TrainConfig};
pub use error::{Error, Result};
pub use experiments::{run_grid, GridConfig, GridReport, ScenarioGrid};
pub use farm::{CostCurves, DiscountReading, FarmParams};
pub use lsmc::{CompareReport, FeedMode, FeedModel, HarvestProblem, LsmcRule, StoppingOutcome, StoppingRule};
pub use model::{
    futures_price, simulate, simulate_pair, CommodityParams, CommoditySpec, CommodityState, PathSet, TimeGrid,
};
