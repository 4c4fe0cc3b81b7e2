//! Side-by-side comparison of two calibrations of the same panel.

use serde::{Deserialize, Serialize};

use super::{check_same_dates, CalibrationResult, FuturesPanel};
use crate::error::Result;
use crate::model::CommodityParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportQuote {
    pub ttm: f64,
    pub market: f64,
    pub fitted_a: f64,
    pub fitted_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDate {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub spot_a: f64,
    pub spot_b: f64,
    pub yield_a: f64,
    pub yield_b: f64,
    pub quotes: Vec<ReportQuote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMetrics {
    /// Log-price RMSE of each fit against the market.
    pub log_rmse_a: f64,
    pub log_rmse_b: f64,
    /// Root mean square of `(F_a - F_b)/F_b` over all quotes.
    pub rms_fitted_gap: f64,
    /// Largest `|F_a - F_b|/F_b` over all quotes.
    pub max_rel_fitted_gap: f64,
    /// Euclidean distance between the parameter vectors.
    pub param_distance: f64,
    /// Largest `|a_i - b_i| / max(|a_i|, |b_i|)` over the parameters.
    pub max_rel_param_diff: f64,
    /// Largest relative gap between the inferred spots.
    pub max_rel_spot_gap: f64,
    /// Pearson correlation of the inferred log-spot series.
    pub spot_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub params_a: CommodityParams,
    pub params_b: CommodityParams,
    pub metrics: DivergenceMetrics,
    pub dates: Vec<ReportDate>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        // constant series: perfectly aligned only if identical
        return if a == b { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// Fitted curves, inferred states and divergence metrics of two results on
/// the panel they were both fitted to.
pub fn uncertainty_report(
    panel: &FuturesPanel,
    a: &CalibrationResult,
    b: &CalibrationResult,
) -> Result<UncertaintyReport> {
    check_same_dates(panel, a)?;
    check_same_dates(panel, b)?;
    let mut dates = Vec::with_capacity(panel.len());
    let (mut gap_sq, mut gap_max, mut n) = (0.0, 0.0f64, 0usize);
    let mut spot_gap = 0.0f64;
    for (i, d) in panel.dates().iter().enumerate() {
        let quotes: Vec<ReportQuote> = d
            .quotes
            .iter()
            .map(|q| ReportQuote {
                ttm: q.ttm,
                market: q.price,
                fitted_a: a.fitted_log_price(i, q.ttm).exp(),
                fitted_b: b.fitted_log_price(i, q.ttm).exp(),
            })
            .collect();
        for q in &quotes {
            let g = (q.fitted_a - q.fitted_b).abs() / q.fitted_b;
            gap_sq += g * g;
            gap_max = gap_max.max(g);
            n += 1;
        }
        let (sa, sb) = (a.states[i], b.states[i]);
        spot_gap = spot_gap.max((sa.log_spot - sb.log_spot).exp_m1().abs());
        dates.push(ReportDate {
            time: d.time,
            label: d.label.clone(),
            spot_a: sa.log_spot.exp(),
            spot_b: sb.log_spot.exp(),
            yield_a: sa.convenience_yield,
            yield_b: sb.convenience_yield,
            quotes,
        });
    }
    let (va, vb) = (a.params.to_vector(), b.params.to_vector());
    let param_distance = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let max_rel_param_diff = va
        .iter()
        .zip(&vb)
        .map(|(x, y)| {
            let m = x.abs().max(y.abs());
            if m == 0.0 {
                0.0
            } else {
                (x - y).abs() / m
            }
        })
        .fold(0.0, f64::max);
    let spots_a: Vec<f64> = a.states.iter().map(|s| s.log_spot).collect();
    let spots_b: Vec<f64> = b.states.iter().map(|s| s.log_spot).collect();
    Ok(UncertaintyReport {
        params_a: a.params,
        params_b: b.params,
        metrics: DivergenceMetrics {
            log_rmse_a: a.log_rmse_on(panel)?,
            log_rmse_b: b.log_rmse_on(panel)?,
            rms_fitted_gap: (gap_sq / n as f64).sqrt(),
            max_rel_fitted_gap: gap_max,
            param_distance,
            max_rel_param_diff,
            max_rel_spot_gap: spot_gap,
            spot_correlation: correlation(&spots_a, &spots_b),
        },
        dates,
    })
}
