//! The subcommands. Each takes the resolved configuration, writes its files
//! into the output directory and returns human-readable summary lines.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use feedrisk_core::calibration::{
    cortazar_calibrate, kalman_calibrate, synthetic_panel, uncertainty_report, CalibrationResult, SyntheticSpec,
};
use feedrisk_core::classifier::{build_labeled_sets, evaluate_classifier, held_out_accuracy, train, DateAccuracy};
use feedrisk_core::experiments::{
    cells_csv, feed_share_sensitivity, run_grid, sensitivity_csv, table4_csv, table5_csv, Cell, CellSeeds,
};
use feedrisk_core::lsmc::{evaluate, solve};
use feedrisk_core::{
    futures_price, rng, simulate_pair, ClassifierRule, FeedMode, FeedModel, LsmcRule, PathSet, StoppingOutcome,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{Commodity, RunConfig};
use crate::error::{CliError, Result};
use crate::futures_csv::{futures_csv, label_weekdays, read_futures_csv};
use crate::output::{commented_csv, json, write, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kalman,
    Cortazar,
    Both,
}

fn csv_rows(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn strings<const N: usize>(a: [&str; N]) -> Vec<String> {
    a.iter().map(|s| s.to_string()).collect()
}

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    feedrisk_core::lsmc::mean_and_se(&v)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let sim = &cfg.simulate;
    let cell = cfg.cell(&sim.salmon, &sim.soy)?;
    let grid = cell.farm.grid()?;
    let seed = rng::derive_seed_str(cfg.seed, "simulate");
    let paths = simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, sim.n_paths, seed)?;
    let prov = Provenance::new("simulate", cfg);

    let mut rows = vec![strings([
        "k",
        "t",
        "salmon_mean",
        "salmon_se",
        "salmon_futures",
        "salmon_z",
        "soy_mean",
        "soy_se",
        "soy_futures",
        "soy_z",
    ])];
    let mut max_z: f64 = 0.0;
    for (k, t) in grid.times().into_iter().enumerate() {
        let mut row = vec![k.to_string(), t.to_string()];
        for (c, spec) in [cell.salmon, cell.soy].iter().enumerate() {
            let (m, se) = mean_se((0..paths.n_paths()).map(|p| paths.spot(p, k, c)));
            let f = futures_price(&spec.params, cell.rate, &spec.init, t)?;
            let z = if se > 0.0 { (m - f) / se } else { 0.0 };
            max_z = max_z.max(z.abs());
            row.extend([m.to_string(), se.to_string(), f.to_string(), z.to_string()]);
        }
        rows.push(row);
    }
    let mut files = vec![write(out, "statistics.csv", &commented_csv(&prov, &csv_rows(rows)?)?)?];
    if sim.write_paths {
        files.push(write(out, "paths.csv", &commented_csv(&prov, &paths_csv(&paths)?)?)?);
    }

    let mut summary = vec![format!(
        "simulated {} paths of '{}' x '{}' on {} dates (seed {seed})",
        sim.n_paths,
        cell.salmon_name,
        cell.soy_name,
        grid.len()
    )];
    summary.push(format!("largest |mean spot - futures| / SE over dates: {max_z:.3}"));

    if sim.panel_dates > 0 {
        let (spec, level) = match sim.panel_commodity {
            Commodity::Salmon => (cell.salmon, cell.farm.spot_market),
            Commodity::Soy => (cell.soy, cfg.grid.soy_quote_level),
        };
        let synthetic = SyntheticSpec {
            params: spec.params,
            rate: cell.rate,
            mu: sim.panel_mu.unwrap_or(cell.rate),
            dt: cfg.calibrate.kalman.dt,
            n_dates: sim.panel_dates,
            maturities: sim.panel_maturities.clone(),
            noise_sd: sim.panel_noise_sd,
            init_log_spot: level.ln(),
            init_convenience_yield: spec.init.convenience_yield,
            seed: rng::derive_seed_str(cfg.seed, "panel"),
        };
        let syn = synthetic_panel(&synthetic)?;
        let start = NaiveDate::parse_from_str(&sim.panel_start, "%Y-%m-%d")
            .map_err(|e| CliError::Config(format!("simulate.panel_start: {e}")))?;
        let panel = label_weekdays(&syn.panel, start)?;
        files.push(write(out, "panel.csv", &commented_csv(&prov, &futures_csv(&panel)?)?)?);
        let truth = PanelTruth {
            spec: synthetic,
            log_spot: syn.log_spot,
            convenience_yield: syn.convenience_yield,
        };
        files.push(write(out, "panel_truth.json", &json(&prov, &truth)?)?);
        summary.push(format!(
            "synthetic futures panel: {} dates x {} maturities, noise sd {}",
            sim.panel_dates,
            sim.panel_maturities.len(),
            sim.panel_noise_sd
        ));
    }
    summary.extend(files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(summary)
}

/// Generating spec and latent states of a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub spec: SyntheticSpec,
    pub log_spot: Vec<f64>,
    pub convenience_yield: Vec<f64>,
}

fn paths_csv(paths: &PathSet) -> Result<String> {
    let mut rows = vec![strings([
        "path",
        "k",
        "t",
        "salmon_spot",
        "salmon_yield",
        "soy_spot",
        "soy_yield",
    ])];
    let times = paths.grid().times();
    for p in 0..paths.n_paths() {
        for (k, t) in times.iter().enumerate() {
            let mut row = vec![p.to_string(), k.to_string(), t.to_string()];
            row.extend(paths.state(p, k).iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    csv_rows(rows)
}

pub fn calibrate(cfg: &RunConfig, input: &Path, method: Method, out: &Path) -> Result<Vec<String>> {
    let panel = read_futures_csv(input)?;
    let c = &cfg.calibrate;
    let prov = Provenance::new("calibrate", cfg);
    let mut summary = vec![format!(
        "{}: {} dates, {} quotes",
        input.display(),
        panel.len(),
        panel.n_quotes()
    )];
    let mut files = Vec::new();
    let describe = |name: &str, r: &CalibrationResult| {
        let p = r.params;
        format!(
            "{name}: sigma1 {:.4} sigma2 {:.4} kappa {:.4} alpha {:.4} lambda {:.4} rho {:.4}; log-RMSE {:.6}{}",
            p.sigma1,
            p.sigma2,
            p.kappa,
            p.alpha,
            p.lambda,
            p.rho,
            r.goodness.log_rmse,
            if r.diagnostics.bound_hits.is_empty() {
                String::new()
            } else {
                format!("; at bounds: {}", r.diagnostics.bound_hits.join(", "))
            }
        )
    };
    let kalman = if matches!(method, Method::Kalman | Method::Both) {
        let r = kalman_calibrate(&panel, c.rate, &c.init, &c.kalman)?;
        files.push(write(out, "calibration_kalman.json", &json(&prov, &r)?)?);
        summary.push(describe("kalman", &r));
        Some(r)
    } else {
        None
    };
    let cortazar = if matches!(method, Method::Cortazar | Method::Both) {
        let r = cortazar_calibrate(&panel, c.rate, &c.init, &c.kalman.search)?;
        files.push(write(out, "calibration_cortazar.json", &json(&prov, &r)?)?);
        summary.push(describe("cortazar", &r));
        Some(r)
    } else {
        None
    };
    if let (Some(k), Some(co)) = (&kalman, &cortazar) {
        let rep = uncertainty_report(&panel, k, co)?;
        summary.push(format!(
            "fitted futures differ by {:.4}% RMS; parameters differ by up to {:.1}% (relative)",
            100.0 * rep.metrics.rms_fitted_gap,
            100.0 * rep.metrics.max_rel_param_diff
        ));
        files.push(write(out, "uncertainty.json", &json(&prov, &rep)?)?);
    }
    summary.extend(files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(summary)
}

/// Training and validation paths of a cell, with the deterministic feed model.
struct CellRun {
    cell: Cell,
    seeds: CellSeeds,
    problem: feedrisk_core::HarvestProblem,
    train_paths: PathSet,
    fresh: PathSet,
}

impl CellRun {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let cell = cfg.cell(&cfg.value.salmon, &cfg.value.soy)?;
        let g = cfg.grid_config();
        let seeds = cell.seeds(cfg.seed);
        let problem = cell.problem(g.reading, g.exercise_at_zero)?;
        let grid = *problem.grid();
        let train_paths = simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, g.m_train, seeds.training)?;
        let fresh = simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, g.m_valid, seeds.validation)?;
        Ok(Self {
            cell,
            seeds,
            problem,
            train_paths,
            fresh,
        })
    }

    fn solve(&self, mode: FeedMode) -> Result<(LsmcRule, StoppingOutcome)> {
        Ok(match mode {
            FeedMode::Deterministic => {
                let feed = FeedModel::expected(&self.cell.soy, self.cell.rate, self.problem.grid())?;
                solve(&self.train_paths.first_commodity(), &self.problem, &feed)?
            }
            FeedMode::Stochastic => solve(&self.train_paths, &self.problem, &FeedModel::Stochastic)?,
        })
    }
}

fn mode_tag(mode: FeedMode) -> u64 {
    match mode {
        FeedMode::Deterministic => 0,
        FeedMode::Stochastic => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub salmon: String,
    pub soy: String,
    pub mode: FeedMode,
    pub seeds: CellSeeds,
    pub rule: LsmcRule,
    /// On the training paths under the rule's own feed model.
    pub in_sample: StoppingOutcome,
    /// On the validation paths under stochastic feed costs.
    pub out_of_sample: StoppingOutcome,
}

pub fn value(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let run = CellRun::new(cfg)?;
    let mode = cfg.value.mode;
    let (rule, in_sample) = run.solve(mode)?;
    let out_of_sample = evaluate(&rule, &run.fresh, &run.problem)?;
    let res = ValueResult {
        salmon: run.cell.salmon_name.clone(),
        soy: run.cell.soy_name.clone(),
        mode,
        seeds: run.seeds,
        rule,
        in_sample,
        out_of_sample,
    };
    let file = write(out, "value.json", &json(&Provenance::new("value", cfg), &res)?)?;
    Ok(vec![
        format!("'{}' x '{}', {mode:?} feed rule", res.salmon, res.soy),
        format!(
            "V0 in sample {:.0} (SE {:.0}), out of sample {:.0} (SE {:.0}), mean harvest date {:.2}",
            res.in_sample.v0,
            res.in_sample.std_err,
            res.out_of_sample.v0,
            res.out_of_sample.std_err,
            res.out_of_sample.mean_stop_index()
        ),
        format!("wrote {}", file.display()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    pub salmon: String,
    pub soy: String,
    pub seeds: CellSeeds,
    pub v0_lsmc: f64,
    pub v0_classifier: f64,
    pub accuracy: Vec<DateAccuracy>,
    pub rule: ClassifierRule,
}

pub fn train_classifier(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let run = CellRun::new(cfg)?;
    let mode = cfg.value.mode;
    let (lsmc_rule, _) = run.solve(mode)?;
    let labeled = simulate_pair(
        &run.cell.salmon,
        &run.cell.soy,
        run.cell.rate,
        run.problem.grid(),
        cfg.experiment.m_classifier,
        run.seeds.classifier_paths,
    )?;
    let stops = evaluate(&lsmc_rule, &labeled, &run.problem)?;
    let sets = build_labeled_sets(&labeled, &stops, mode.state_dim())?;
    let train_cfg = TrainConfig {
        seed: rng::derive_seed(run.seeds.classifier, mode_tag(mode)),
        ..cfg.experiment.train
    };
    let rule = train(&labeled, &sets, mode, &train_cfg)?;
    drop(labeled);
    let v_lsmc = evaluate(&lsmc_rule, &run.fresh, &run.problem)?;
    let v_cls = evaluate_classifier(&rule, &run.fresh, &run.problem)?;
    let held = build_labeled_sets(&run.fresh, &v_lsmc, mode.state_dim())?;
    let accuracy = held_out_accuracy(&rule, &run.fresh, &held)?;
    let prov = Provenance::new("train-classifier", cfg);

    let mut rows = vec![strings([
        "date",
        "n_exercise",
        "n_continuation",
        "exercise_recall",
        "continuation_recall",
        "balanced_accuracy",
        "agreement",
    ])];
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for a in &accuracy {
        rows.push(vec![
            a.date.to_string(),
            a.n_exercise.to_string(),
            a.n_continuation.to_string(),
            opt(a.exercise_recall),
            opt(a.continuation_recall),
            opt(a.balanced_accuracy),
            opt(a.agreement),
        ]);
    }
    let min_ba = accuracy.iter().filter_map(|a| a.balanced_accuracy).reduce(f64::min);
    let res = ClassifierResult {
        salmon: run.cell.salmon_name.clone(),
        soy: run.cell.soy_name.clone(),
        seeds: run.seeds,
        v0_lsmc: v_lsmc.v0,
        v0_classifier: v_cls.v0,
        accuracy,
        rule,
    };
    let files = [
        write(out, "classifier.json", &json(&prov, &res)?)?,
        write(out, "accuracy.csv", &commented_csv(&prov, &csv_rows(rows)?)?)?,
    ];
    let mut summary = vec![
        format!("'{}' x '{}', {mode:?} feed classifiers", res.salmon, res.soy),
        format!(
            "V0 classifier {:.0} vs LSMC {:.0} ({:+.3}%)",
            res.v0_classifier,
            res.v0_lsmc,
            100.0 * (res.v0_classifier / res.v0_lsmc - 1.0)
        ),
        format!(
            "lowest held-out balanced accuracy: {}",
            min_ba.map_or("n/a".into(), |b| format!("{b:.4}"))
        ),
    ];
    summary.extend(files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(summary)
}

pub fn reproduce_tables(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let report = run_grid(&cfg.grid, &cfg.grid_config())?;
    let prov = Provenance::new("reproduce-tables", cfg);
    let files: Vec<PathBuf> = vec![
        write(out, "table4.csv", &commented_csv(&prov, &table4_csv(&report)?)?)?,
        write(out, "table5.csv", &commented_csv(&prov, &table5_csv(&report)?)?)?,
        write(out, "cells.csv", &commented_csv(&prov, &cells_csv(&report)?)?)?,
        write(out, "grid_report.json", &json(&prov, &report)?)?,
    ];
    let mut summary = Vec::new();
    for c in &report.cells {
        summary.push(match (&c.values, &c.error) {
            (Some(v), _) => format!(
                "{:>12} x {:<12} RI_tau {:.4} (SE {:.4}){}",
                c.salmon,
                c.soy,
                v.ri_tau,
                v.se_ri_tau,
                v.ri_f.map_or(String::new(), |r| format!("  RI_f {r:.4}"))
            ),
            (None, e) => format!(
                "{:>12} x {:<12} failed: {}",
                c.salmon,
                c.soy,
                e.as_deref().unwrap_or("")
            ),
        });
    }
    summary.extend(files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(summary)
}

pub fn sensitivity(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let s = &cfg.sensitivity;
    let cell = cfg.cell(&s.salmon, &s.soy)?;
    let res = feed_share_sensitivity(&cell, &s.shares, &cfg.grid_config())?;
    let prov = Provenance::new("sensitivity", cfg);
    let files = [
        write(out, "sensitivity.csv", &commented_csv(&prov, &sensitivity_csv(&res)?)?)?,
        write(out, "sensitivity.json", &json(&prov, &res)?)?,
    ];
    let mut summary = vec![format!("'{}' x '{}'", cell.salmon_name, cell.soy_name)];
    for r in &res {
        summary.push(match r.ri_tau {
            Some(ri) => format!("F0 = {:.3} PC: RI_tau {ri:.4}", r.share),
            None => format!("F0 = {:.3} PC: failed: {}", r.share, r.error.as_deref().unwrap_or("")),
        });
    }
    summary.extend(files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(summary)
}
