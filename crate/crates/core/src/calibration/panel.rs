//! Futures panels: ragged per-date quotes and their fixed-maturity projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quote {
    /// Time to maturity in years.
    pub ttm: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelDate {
    /// Observation time in years.
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub quotes: Vec<Quote>,
}

/// Dated futures quotes; the number of maturities may differ between dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PanelDate>", into = "Vec<PanelDate>")]
pub struct FuturesPanel {
    dates: Vec<PanelDate>,
}

impl TryFrom<Vec<PanelDate>> for FuturesPanel {
    type Error = Error;

    fn try_from(dates: Vec<PanelDate>) -> Result<Self> {
        Self::new(dates)
    }
}

impl From<FuturesPanel> for Vec<PanelDate> {
    fn from(p: FuturesPanel) -> Self {
        p.dates
    }
}

impl FuturesPanel {
    pub fn new(dates: Vec<PanelDate>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::InvalidInput("futures panel has no dates".into()));
        }
        for (i, d) in dates.iter().enumerate() {
            if !d.time.is_finite() {
                return Err(Error::InvalidInput(format!("date {i}: time is not finite")));
            }
            if i > 0 && !(d.time > dates[i - 1].time) {
                return Err(Error::InvalidInput(format!(
                    "date {i}: times must be strictly increasing ({} after {})",
                    d.time,
                    dates[i - 1].time
                )));
            }
            if d.quotes.is_empty() {
                return Err(Error::InvalidInput(format!("date {i}: no quotes")));
            }
            for q in &d.quotes {
                if !(q.ttm >= 0.0) || !q.ttm.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "date {i}: time to maturity must be finite and >= 0, got {}",
                        q.ttm
                    )));
                }
                if !(q.price > 0.0) || !q.price.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "date {i}: price must be finite and > 0, got {}",
                        q.price
                    )));
                }
            }
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[PanelDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_quotes(&self) -> usize {
        self.dates.iter().map(|d| d.quotes.len()).sum()
    }

    /// The same panel with every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut dates = self.dates.clone();
        for d in &mut dates {
            for q in &mut d.quotes {
                q.price *= factor;
            }
        }
        Self::new(dates)
    }

    /// Projects every date onto `maturities`, taking for each target the quote
    /// with the nearest time to maturity (the shorter one on ties).
    pub fn to_fixed_grid(&self, maturities: &[f64]) -> Result<FixedPanel> {
        if maturities.is_empty() {
            return Err(Error::InvalidInput("fixed maturity grid is empty".into()));
        }
        if maturities.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidInput("fixed maturities must be finite and >= 0".into()));
        }
        let log_prices = self
            .dates
            .iter()
            .map(|d| {
                maturities
                    .iter()
                    .map(|&m| {
                        let q = d
                            .quotes
                            .iter()
                            .min_by(|a, b| {
                                let da = (a.ttm - m).abs();
                                let db = (b.ttm - m).abs();
                                da.total_cmp(&db).then(a.ttm.total_cmp(&b.ttm))
                            })
                            .expect("validated non-empty");
                        q.price.ln()
                    })
                    .collect()
            })
            .collect();
        Ok(FixedPanel {
            times: self.dates.iter().map(|d| d.time).collect(),
            maturities: maturities.to_vec(),
            log_prices,
        })
    }
}

/// Log futures prices on a maturity grid shared by every date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPanel {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `log_prices[i][j]` is the log price at date `i`, maturity `j`.
    pub log_prices: Vec<Vec<f64>>,
}

impl FixedPanel {
    /// Back to a regular panel with every date quoting the grid maturities.
    pub fn to_panel(&self) -> Result<FuturesPanel> {
        FuturesPanel::new(
            self.times
                .iter()
                .zip(&self.log_prices)
                .map(|(&time, row)| PanelDate {
                    time,
                    label: None,
                    quotes: self
                        .maturities
                        .iter()
                        .zip(row)
                        .map(|(&ttm, &l)| Quote { ttm, price: l.exp() })
                        .collect(),
                })
                .collect(),
        )
    }
}

/// Root mean squared error of a flat curve per date (`log F` equal to the
/// date's mean log price).
pub fn flat_curve_rmse(panel: &FuturesPanel) -> f64 {
    let mut sse = 0.0;
    for d in panel.dates() {
        let logs: Vec<f64> = d.quotes.iter().map(|q| q.price.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        sse += logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>();
    }
    (sse / panel.n_quotes() as f64).sqrt()
}

/// Default fixed maturities: 1, 2, 3, 6, 9 and 12 months.
pub fn default_maturities() -> Vec<f64> {
    [1.0, 2.0, 3.0, 6.0, 9.0, 12.0].iter().map(|m| m / 12.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(time: f64, quotes: &[(f64, f64)]) -> PanelDate {
        PanelDate {
            time,
            label: None,
            quotes: quotes.iter().map(|&(ttm, price)| Quote { ttm, price }).collect(),
        }
    }

    #[test]
    fn validation() {
        assert!(FuturesPanel::new(vec![]).is_err());
        assert!(FuturesPanel::new(vec![date(0.0, &[(0.1, 0.0)])]).is_err());
        assert!(FuturesPanel::new(vec![date(0.0, &[(-0.1, 1.0)])]).is_err());
        assert!(FuturesPanel::new(vec![date(0.0, &[(0.1, 1.0)]), date(0.0, &[(0.1, 1.0)])]).is_err());
        assert!(FuturesPanel::new(vec![date(0.0, &[])]).is_err());
        assert!(FuturesPanel::new(vec![date(0.0, &[(0.1, 1.0)]), date(0.1, &[(0.1, 1.0), (0.3, 2.0)])]).is_ok());
    }

    #[test]
    fn nearest_neighbour_projection() {
        let p = FuturesPanel::new(vec![date(0.0, &[(0.25, 1.0), (0.75, 2.0), (1.5, 4.0)])]).unwrap();
        let f = p.to_fixed_grid(&[0.0, 0.5, 0.625, 2.0]).unwrap();
        let got: Vec<f64> = f.log_prices[0].iter().map(|l| l.exp()).collect();
        // 0.5 is equidistant from 0.25 and 0.75: the shorter wins
        assert_eq!(got, vec![1.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn serde_round_trip_validates() {
        let p = FuturesPanel::new(vec![date(0.0, &[(0.1, 1.5)])]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<FuturesPanel>(&s).unwrap(), p);
        assert!(serde_json::from_str::<FuturesPanel>(r#"[{"time":0,"quotes":[{"ttm":0.1,"price":-1}]}]"#).is_err());
    }

    #[test]
    fn flat_baseline() {
        let p = FuturesPanel::new(vec![date(0.0, &[(0.1, 1.0), (0.2, 1.0)])]).unwrap();
        assert_eq!(flat_curve_rmse(&p), 0.0);
    }
}
