use std::path::Path;
use std::process::{Command, Output};

use feedrisk_cli::commands::{ClassifierResult, PanelTruth, ValueResult};
use feedrisk_cli::futures_csv::parse_futures_csv;
use feedrisk_cli::output::{csv_body, echoed_config, Envelope};
use feedrisk_core::calibration::{CalibrationResult, UncertaintyReport};
use feedrisk_core::experiments::{GridReport, ShareResult};

fn feedrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedrisk"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = feedrisk(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("structured error");
    v["error"].clone()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "
seed = 11
[experiment]
m_train = 3000
m_valid = 3000
m_classifier = 6000
[experiment.train]
min_batches = 5
[calibrate.kalman]
maturities = [0.0833333333333333, 0.25, 0.5, 1.0]
[calibrate.kalman.search]
extra_starts = 0
[simulate]
panel_maturities = [0.0833333333333333, 0.25, 0.5, 1.0]
panel_noise_sd = 0.005
";

#[test]
fn simulated_panel_calibrates_to_the_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);
    let stdout = ok(
        d,
        &["simulate", "--config", &cfg, "--paths", "2000", "--panel-dates", "300"],
    );
    assert!(stdout.contains("synthetic futures panel"));

    let stats = read(d, "statistics.csv");
    assert_eq!(echoed_config(&stats).unwrap().seed, 11);
    assert_eq!(csv_body(&stats).lines().count(), 1 + 73);

    let panel_text = read(d, "panel.csv");
    let panel = parse_futures_csv(&panel_text, Path::new("panel.csv")).unwrap();
    assert_eq!(panel.len(), 300);
    let truth: Envelope<PanelTruth> = serde_json::from_str(&read(d, "panel_truth.json")).unwrap();
    assert_eq!(truth.result.log_spot.len(), 300);

    let input = d.join("panel.csv");
    let stdout = ok(d, &["calibrate", "--config", &cfg, "--input", input.to_str().unwrap()]);
    assert!(stdout.contains("kalman:") && stdout.contains("cortazar:"));
    for name in ["calibration_kalman.json", "calibration_cortazar.json"] {
        let text = read(d, name);
        let r: Envelope<CalibrationResult> = serde_json::from_str(&text).unwrap();
        assert!(
            r.result.goodness.log_rmse <= 1.5 * 0.005,
            "{name}: {}",
            r.result.goodness.log_rmse
        );
        assert_eq!(serde_json::to_string_pretty(&r).unwrap(), text);
    }
    let rep: Envelope<UncertaintyReport> = serde_json::from_str(&read(d, "uncertainty.json")).unwrap();
    assert_eq!(rep.result.dates.len(), 300);
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("bad.csv");
    std::fs::write(
        &input,
        "date,ttm_years,price\n2006-01-02,0.25,100\n2006-01-02,0.5,abc\n",
    )
    .unwrap();
    let out = feedrisk(d, &["calibrate", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["kind"], "csv");
    assert_eq!(e["line"], 3);
    assert!(e["message"].as_str().unwrap().contains("line 3"));

    let out = feedrisk(d, &["calibrate", "--input", d.join("missing.csv").to_str().unwrap()]);
    assert_eq!(error_json(&out)["kind"], "io");
}

#[test]
fn invalid_config_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "[experiment]\nm_trian = 5\n");
    let out = feedrisk(d, &["value", "--config", &cfg]);
    assert_eq!(error_json(&out)["kind"], "config");

    let out = feedrisk(d, &["value", "--salmon", "sideways"]);
    assert_eq!(error_json(&out)["kind"], "validation");
    assert!(!d.join("value.json").exists());

    let out = feedrisk(d, &["sensitivity", "--shares", "0.5,1.2"]);
    assert_eq!(error_json(&out)["kind"], "config");
}

#[test]
fn value_and_classifier_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);
    ok(d, &["value", "--config", &cfg, "--mode", "deterministic"]);
    let text = read(d, "value.json");
    let v: Envelope<ValueResult> = serde_json::from_str(&text).unwrap();
    assert_eq!(v.provenance.config.value.mode, feedrisk_core::FeedMode::Deterministic);
    assert_eq!(v.result.out_of_sample.n_paths(), 3000);
    assert_eq!(serde_json::to_string_pretty(&v).unwrap(), text);

    ok(d, &["train-classifier", "--config", &cfg]);
    let text = read(d, "classifier.json");
    let c: Envelope<ClassifierResult> = serde_json::from_str(&text).unwrap();
    assert_eq!(c.result.rule.dates.len(), 71);
    assert_eq!(serde_json::to_string_pretty(&c).unwrap(), text);
    assert_eq!(csv_body(&read(d, "accuracy.csv")).lines().count(), 72);
}

#[test]
fn tables_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        &format!(
            "{SMALL}
[[grid.salmon]]
name = \"down down\"
params = {{ sigma1 = 0.23, sigma2 = 0.75, kappa = 2.6, alpha = 0.02, lambda = 0.01, rho = 0.9 }}
[[grid.soy]]
name = \"high vol\"
params = {{ sigma1 = 2.0, sigma2 = 0.4, kappa = 1.2, alpha = 0.06, lambda = 0.14, rho = 0.44 }}
"
        ),
    );
    let a = d.join("a");
    let b = d.join("b");
    let base = ["reproduce-tables", "--config", &cfg];
    let out_a = Command::new(env!("CARGO_BIN_EXE_feedrisk"))
        .args(base)
        .args(["--threads", "1", "--out", a.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out_a.status.success(), "{}", String::from_utf8_lossy(&out_a.stderr));
    let out_b = Command::new(env!("CARGO_BIN_EXE_feedrisk"))
        .args(base)
        .args(["--threads", "3", "--out", b.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out_b.status.success());
    for name in ["table4.csv", "table5.csv", "cells.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let t4 = read(&a, "table4.csv");
    assert!(t4.starts_with("# feedrisk reproduce-tables"));
    let echoed = echoed_config(&t4).unwrap();
    assert_eq!(echoed.grid.soy[0].name, "high vol");
    assert_eq!(echoed.experiment.m_train, 3000);
    let body = csv_body(&t4);
    assert_eq!(body.lines().next().unwrap(), "metric,soy,down down");

    let rep: Envelope<GridReport> = serde_json::from_str(&read(&a, "grid_report.json")).unwrap();
    let v = rep.result.cells[0].values.as_ref().unwrap();
    let ri: f64 = body
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(ri, v.ri_tau);
}

#[test]
fn sensitivity_writes_one_row_per_share() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);
    let stdout = ok(d, &["sensitivity", "--config", &cfg, "--shares", "0.1,0.25,0.5"]);
    assert_eq!(stdout.matches("RI_tau").count(), 3);
    assert_eq!(csv_body(&read(d, "sensitivity.csv")).lines().count(), 4);
    let r: Envelope<Vec<ShareResult>> = serde_json::from_str(&read(d, "sensitivity.json")).unwrap();
    assert_eq!(r.result[2].share, 0.5);
}
