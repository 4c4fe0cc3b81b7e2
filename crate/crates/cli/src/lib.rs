//! Command-line front end: configuration, futures CSV ingestion and result
//! files for the feedrisk engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod futures_csv;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use feedrisk_core::rng;
use feedrisk_core::FeedMode;

pub use commands::Method;
pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "feedrisk",
    version,
    about = "Salmon harvesting decisions under stochastic feed costs"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate salmon and soy paths; optionally a synthetic futures panel
    Simulate(SimulateArgs),
    /// Fit the two-factor model to a futures CSV (date,ttm_years,price)
    Calibrate(CalibrateArgs),
    /// Solve and evaluate the LSMC harvesting rule of one cell
    Value(CellArgs),
    /// Train per-date exercise classifiers on the LSMC labels of one cell
    TrainClassifier(CellArgs),
    /// Run the scenario grid and write the relative-improvement and value tables
    ReproduceTables(TablesArgs),
    /// Relative improvement against the initial feed-cost share
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub salmon: Option<String>,
    #[arg(long)]
    pub soy: Option<String>,
    /// Number of paths
    #[arg(long)]
    pub paths: Option<usize>,
    /// Also write a synthetic daily futures panel with this many dates
    #[arg(long)]
    pub panel_dates: Option<usize>,
    /// Write every simulated state to paths.csv
    #[arg(long)]
    pub write_paths: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Futures quotes CSV
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub method: Method,
}

#[derive(Debug, Args)]
pub struct CellArgs {
    #[arg(long)]
    pub salmon: Option<String>,
    #[arg(long)]
    pub soy: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<FeedMode>,
    /// Training and validation paths each
    #[arg(long)]
    pub paths: Option<usize>,
    /// Paths labeled for classifier training
    #[arg(long)]
    pub classifier_paths: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    /// Training and validation paths each
    #[arg(long)]
    pub paths: Option<usize>,
    /// Paths labeled for classifier training
    #[arg(long)]
    pub classifier_paths: Option<usize>,
    /// Skip the classifier columns
    #[arg(long)]
    pub no_classifiers: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub salmon: Option<String>,
    #[arg(long)]
    pub soy: Option<String>,
    /// Comma-separated feed-cost shares of the production cost, each in (0, 1)
    #[arg(long, value_delimiter = ',')]
    pub shares: Option<Vec<f64>>,
    /// Training and validation paths each
    #[arg(long)]
    pub paths: Option<usize>,
}

fn parse_mode(s: &str) -> std::result::Result<FeedMode, String> {
    match s {
        "deterministic" => Ok(FeedMode::Deterministic),
        "stochastic" => Ok(FeedMode::Stochastic),
        _ => Err(format!("expected 'deterministic' or 'stochastic', got '{s}'")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// The configuration file with this invocation's flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        let paths = |cfg: &mut RunConfig, n: Option<usize>| {
            set(&mut cfg.experiment.m_train, n);
            set(&mut cfg.experiment.m_valid, n);
        };
        match &self.command {
            Command::Simulate(a) => {
                set(&mut cfg.simulate.salmon, a.salmon.clone());
                set(&mut cfg.simulate.soy, a.soy.clone());
                set(&mut cfg.simulate.n_paths, a.paths);
                set(&mut cfg.simulate.panel_dates, a.panel_dates);
                cfg.simulate.write_paths |= a.write_paths;
            }
            Command::Calibrate(_) => {
                cfg.calibrate.kalman.search.seed = rng::derive_seed_str(cfg.seed, "calibrate");
            }
            Command::Value(a) | Command::TrainClassifier(a) => {
                set(&mut cfg.value.salmon, a.salmon.clone());
                set(&mut cfg.value.soy, a.soy.clone());
                set(&mut cfg.value.mode, a.mode);
                paths(&mut cfg, a.paths);
                set(&mut cfg.experiment.m_classifier, a.classifier_paths);
            }
            Command::ReproduceTables(a) => {
                paths(&mut cfg, a.paths);
                set(&mut cfg.experiment.m_classifier, a.classifier_paths);
                cfg.experiment.classifiers &= !a.no_classifiers;
            }
            Command::Sensitivity(a) => {
                set(&mut cfg.sensitivity.salmon, a.salmon.clone());
                set(&mut cfg.sensitivity.soy, a.soy.clone());
                set(&mut cfg.sensitivity.shares, a.shares.clone());
                paths(&mut cfg, a.paths);
            }
        }
        cfg.validate()?;
        match &self.command {
            Command::Simulate(_) => cfg.cell(&cfg.simulate.salmon, &cfg.simulate.soy).map(drop)?,
            Command::Value(_) | Command::TrainClassifier(_) => cfg.cell(&cfg.value.salmon, &cfg.value.soy).map(drop)?,
            Command::Sensitivity(_) => cfg.cell(&cfg.sensitivity.salmon, &cfg.sensitivity.soy).map(drop)?,
            Command::Calibrate(_) | Command::ReproduceTables(_) => {}
        }
        Ok(cfg)
    }

    /// Resolves the configuration and runs the command, returning the summary.
    pub fn run(&self) -> Result<Vec<String>> {
        let cfg = self.resolve()?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be >= 1".into()));
            }
            pool = pool.num_threads(n);
        }
        let pool = pool.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        let out = &self.out;
        pool.install(|| match &self.command {
            Command::Simulate(_) => commands::simulate(&cfg, out),
            Command::Calibrate(a) => commands::calibrate(&cfg, &a.input, a.method, out),
            Command::Value(_) => commands::value(&cfg, out),
            Command::TrainClassifier(_) => commands::train_classifier(&cfg, out),
            Command::ReproduceTables(_) => commands::reproduce_tables(&cfg, out),
            Command::Sensitivity(_) => commands::sensitivity(&cfg, out),
        })
    }
}
