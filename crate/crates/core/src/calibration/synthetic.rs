//! Synthetic futures panels generated by the filter's own state-space model.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FuturesPanel, PanelDate, Quote};
use crate::error::{Error, Result};
use crate::model::CommodityParams;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub params: CommodityParams,
    pub rate: f64,
    /// Historical spot drift of the state transition.
    pub mu: f64,
    pub dt: f64,
    pub n_dates: usize,
    pub maturities: Vec<f64>,
    /// Standard deviation of i.i.d. Gaussian noise added to each log price.
    pub noise_sd: f64,
    pub init_log_spot: f64,
    pub init_convenience_yield: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: FuturesPanel,
    pub log_spot: Vec<f64>,
    pub convenience_yield: Vec<f64>,
}

/// Simulates the Euler transition of (log spot, yield) and quotes noisy log
/// futures prices on `maturities` at every date.
pub fn synthetic_panel(spec: &SyntheticSpec) -> Result<SyntheticPanel> {
    spec.params.validate()?;
    if spec.n_dates == 0 || spec.maturities.is_empty() {
        return Err(Error::InvalidInput("need at least one date and one maturity".into()));
    }
    if !(spec.dt > 0.0) || !(spec.noise_sd >= 0.0) {
        return Err(Error::InvalidParameter("need dt > 0 and noise_sd >= 0".into()));
    }
    let p = &spec.params;
    let dt = spec.dt;
    let mut state_rng = rng::substream(spec.seed, 0);
    let mut noise_rng = rng::substream(spec.seed, 1);
    let loads: Vec<_> = spec.maturities.iter().map(|&m| p.loadings(spec.rate, m)).collect();
    let rho_c = (1.0 - p.rho * p.rho).max(0.0).sqrt();
    let (mut s, mut d) = (spec.init_log_spot, spec.init_convenience_yield);
    let mut dates = Vec::with_capacity(spec.n_dates);
    let mut log_spot = Vec::with_capacity(spec.n_dates);
    let mut yields = Vec::with_capacity(spec.n_dates);
    for i in 0..spec.n_dates {
        if i > 0 {
            let z1: f64 = StandardNormal.sample(&mut state_rng);
            let z2: f64 = StandardNormal.sample(&mut state_rng);
            let w2 = p.rho * z1 + rho_c * z2;
            let s_next = s + (spec.mu - d - 0.5 * p.sigma1 * p.sigma1) * dt + p.sigma1 * dt.sqrt() * z1;
            let d_next = d + p.kappa * (p.alpha - d) * dt + p.sigma2 * dt.sqrt() * w2;
            s = s_next;
            d = d_next;
        }
        let quotes = spec
            .maturities
            .iter()
            .zip(&loads)
            .map(|(&ttm, ld)| {
                let eps: f64 = StandardNormal.sample(&mut noise_rng);
                Quote {
                    ttm,
                    price: (ld.log_price(s, d) + spec.noise_sd * eps).exp(),
                }
            })
            .collect();
        dates.push(PanelDate {
            time: i as f64 * dt,
            label: None,
            quotes,
        });
        log_spot.push(s);
        yields.push(d);
    }
    Ok(SyntheticPanel {
        panel: FuturesPanel::new(dates)?,
        log_spot,
        convenience_yield: yields,
    })
}
