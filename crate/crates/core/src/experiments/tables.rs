//! CSV renderings of grid and sensitivity reports. Floats use the shortest
//! representation that round-trips, so equal reports give equal bytes.

use super::{CellValues, Estimate, GridReport, ShareResult};
use crate::error::{Error, Result};
use crate::lsmc::FeedMode;

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)
            .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numerical(format!("csv: {e}")))
}

/// Soy rows by salmon columns, one block of rows per metric.
fn wide(report: &GridReport, metrics: &[(&str, fn(&CellValues) -> Option<f64>)]) -> Result<String> {
    let salmon: Vec<&str> = report.grid.salmon.iter().map(|s| s.name.as_str()).collect();
    let mut header = vec!["metric".to_string(), "soy".to_string()];
    header.extend(salmon.iter().map(|s| s.to_string()));
    let mut rows = vec![header];
    for (name, get) in metrics {
        for soy in &report.grid.soy {
            let mut row = vec![name.to_string(), soy.name.clone()];
            for s in &salmon {
                let v = report.cell(s, &soy.name).and_then(|c| c.values.as_ref()).and_then(get);
                row.push(opt(v));
            }
            rows.push(row);
        }
    }
    write(rows)
}

/// Relative improvements `RI^τ` and `RI^f`.
pub fn table4_csv(report: &GridReport) -> Result<String> {
    wide(report, &[("ri_tau", |v| Some(v.ri_tau)), ("ri_f", |v| v.ri_f)])
}

/// Farm values of the four rules.
pub fn table5_csv(report: &GridReport) -> Result<String> {
    wide(
        report,
        &[
            ("v0_tau_det", |v| Some(v.tau_det.v0)),
            ("v0_tau_stoch", |v| Some(v.tau_stoch.v0)),
            ("v0_f_det", |v| v.f_det.map(|e| e.v0)),
            ("v0_f_stoch", |v| v.f_stoch.map(|e| e.v0)),
        ],
    )
}

fn est(e: Option<Estimate>) -> [String; 2] {
    [opt(e.map(|e| e.v0)), opt(e.map(|e| e.std_err))]
}

/// One row per cell with values, standard errors, seeds and status.
pub fn cells_csv(report: &GridReport) -> Result<String> {
    let header = [
        "salmon",
        "soy",
        "status",
        "v0_tau_det",
        "se_tau_det",
        "v0_tau_stoch",
        "se_tau_stoch",
        "v0_f_det",
        "se_f_det",
        "v0_f_stoch",
        "se_f_stoch",
        "ri_tau",
        "se_ri_tau",
        "ri_f",
        "se_ri_f",
        "in_sample_det",
        "in_sample_stoch",
        "frac_stoch_earlier",
        "frac_same",
        "frac_stoch_later",
        "gap_f_det",
        "gap_f_stoch",
        "min_balanced_accuracy_det",
        "min_balanced_accuracy_stoch",
        "seed_training",
        "seed_validation",
        "seed_classifier",
        "seed_classifier_paths",
        "error",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for c in &report.cells {
        let v = c.values.as_ref();
        let mut row = vec![
            c.salmon.clone(),
            c.soy.clone(),
            if c.error.is_none() { "ok" } else { "failed" }.to_string(),
        ];
        row.extend(est(v.map(|v| v.tau_det)));
        row.extend(est(v.map(|v| v.tau_stoch)));
        row.extend(est(v.and_then(|v| v.f_det)));
        row.extend(est(v.and_then(|v| v.f_stoch)));
        row.extend([
            opt(v.map(|v| v.ri_tau)),
            opt(v.map(|v| v.se_ri_tau)),
            opt(v.and_then(|v| v.ri_f)),
            opt(v.and_then(|v| v.se_ri_f)),
            opt(v.map(|v| v.in_sample_det.v0)),
            opt(v.map(|v| v.in_sample_stoch.v0)),
            opt(v.map(|v| v.stops.frac_stoch_earlier)),
            opt(v.map(|v| v.stops.frac_same)),
            opt(v.map(|v| v.stops.frac_stoch_later)),
            opt(v.and_then(|v| v.classifier_gap(FeedMode::Deterministic))),
            opt(v.and_then(|v| v.classifier_gap(FeedMode::Stochastic))),
            opt(v.and_then(|v| v.min_balanced_accuracy(FeedMode::Deterministic))),
            opt(v.and_then(|v| v.min_balanced_accuracy(FeedMode::Stochastic))),
            c.seeds.training.to_string(),
            c.seeds.validation.to_string(),
            c.seeds.classifier.to_string(),
            c.seeds.classifier_paths.to_string(),
            c.error.clone().unwrap_or_default(),
        ]);
        rows.push(row);
    }
    write(rows)
}

/// One row per feed share.
pub fn sensitivity_csv(results: &[ShareResult]) -> Result<String> {
    let mut rows = vec![[
        "share",
        "feed_cost",
        "v0_tau_det",
        "se_tau_det",
        "v0_tau_stoch",
        "se_tau_stoch",
        "ri_tau",
        "se_ri_tau",
        "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for r in results {
        let mut row = vec![num(r.share), num(r.feed_cost)];
        row.extend(est(r.tau_det));
        row.extend(est(r.tau_stoch));
        row.extend([opt(r.ri_tau), opt(r.se_ri_tau), r.error.clone().unwrap_or_default()]);
        rows.push(row);
    }
    write(rows)
}
