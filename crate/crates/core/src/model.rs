//! Schwartz two-factor commodity dynamics under the risk-neutral measure.
//!
//! Spot `S` and convenience yield `δ` follow
//!
//! ```text
//! dS = (r - δ) S dt + σ1 S dW1
//! dδ = κ(α̂ - δ) dt + σ2 dW2,      d<W1, W2> = ρ dt,   α̂ = α - λ/κ
//! ```
//!
//! Simulation is exact on the grid: over one step the triple
//! (spot Brownian term, integrated yield noise, yield noise) is jointly
//! Gaussian with closed-form covariance, so no discretization bias enters
//! at the coarse harvesting grid.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng;

/// Parameters of one Schwartz two-factor commodity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommodityParams {
    /// Spot volatility.
    pub sigma1: f64,
    /// Convenience-yield volatility.
    pub sigma2: f64,
    /// Mean-reversion speed of the convenience yield.
    pub kappa: f64,
    /// Long-term mean of the convenience yield.
    pub alpha: f64,
    /// Risk premium on the convenience yield.
    pub lambda: f64,
    /// Correlation between spot and yield shocks.
    pub rho: f64,
    /// Admit a negative risk premium. Only calibration sets this.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub signed_premium: bool,
}

impl CommodityParams {
    pub fn new(sigma1: f64, sigma2: f64, kappa: f64, alpha: f64, lambda: f64, rho: f64) -> Result<Self> {
        let p = Self {
            sigma1,
            sigma2,
            kappa,
            alpha,
            lambda,
            rho,
            signed_premium: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Like [`CommodityParams::new`] but allows `lambda < 0`.
    pub fn with_signed_premium(
        sigma1: f64,
        sigma2: f64,
        kappa: f64,
        alpha: f64,
        lambda: f64,
        rho: f64,
    ) -> Result<Self> {
        let p = Self {
            sigma1,
            sigma2,
            kappa,
            alpha,
            lambda,
            rho,
            signed_premium: true,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from the ordered vector `[σ1, σ2, κ, α, λ, ρ]`.
    pub fn from_vector(v: &[f64], signed_premium: bool) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::DimensionMismatch {
                expected: 6,
                got: v.len(),
            });
        }
        let p = Self {
            sigma1: v[0],
            sigma2: v[1],
            kappa: v[2],
            alpha: v[3],
            lambda: v[4],
            rho: v[5],
            signed_premium,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_vector(&self) -> [f64; 6] {
        [self.sigma1, self.sigma2, self.kappa, self.alpha, self.lambda, self.rho]
    }

    /// Zero volatilities are admitted; they give deterministic dynamics.
    pub fn validate(&self) -> Result<()> {
        let all = self.to_vector();
        ensure(all.iter().all(|x| x.is_finite()), || {
            format!("non-finite commodity parameter in {all:?}")
        })?;
        ensure(self.sigma1 >= 0.0, || {
            format!("sigma1 must be >= 0, got {}", self.sigma1)
        })?;
        ensure(self.sigma2 >= 0.0, || {
            format!("sigma2 must be >= 0, got {}", self.sigma2)
        })?;
        ensure(self.kappa > 0.0, || format!("kappa must be > 0, got {}", self.kappa))?;
        ensure(self.rho.abs() <= 1.0, || {
            format!("|rho| must be <= 1, got {}", self.rho)
        })?;
        ensure(self.signed_premium || self.lambda >= 0.0, || {
            format!("lambda must be >= 0, got {}", self.lambda)
        })?;
        Ok(())
    }

    /// Risk-neutral long-term yield `α - λ/κ`.
    pub fn alpha_hat(&self) -> f64 {
        self.alpha - self.lambda / self.kappa
    }

    /// Loadings of the log futures price: `log F = log S - δ·b + a`.
    pub fn loadings(&self, r: f64, ttm: f64) -> FuturesLoadings {
        let k = self.kappa;
        let (s1, s2, rho) = (self.sigma1, self.sigma2, self.rho);
        let ah = self.alpha_hat();
        // 1 - e^{-κτ} and 1 - e^{-2κτ} without cancellation
        let one_m_e1 = -(-k * ttm).exp_m1();
        let one_m_e2 = -(-2.0 * k * ttm).exp_m1();
        let a = (r - ah + 0.5 * s2 * s2 / (k * k) - rho * s1 * s2 / k) * ttm
            + 0.25 * s2 * s2 * one_m_e2 / (k * k * k)
            + (ah * k + s1 * s2 * rho - s2 * s2 / k) * one_m_e1 / (k * k);
        FuturesLoadings { a, b: one_m_e1 / k }
    }
}

/// Affine loadings of log futures prices on (log spot, yield).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuturesLoadings {
    pub a: f64,
    pub b: f64,
}

impl FuturesLoadings {
    pub fn log_price(&self, log_spot: f64, convenience_yield: f64) -> f64 {
        log_spot - convenience_yield * self.b + self.a
    }
}

/// Spot price and convenience yield of one commodity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommodityState {
    pub spot: f64,
    pub convenience_yield: f64,
}

impl CommodityState {
    pub fn new(spot: f64, convenience_yield: f64) -> Self {
        Self {
            spot,
            convenience_yield,
        }
    }
}

/// Uniform grid `t_k = k·T/N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        ensure(horizon > 0.0 && horizon.is_finite(), || {
            format!("horizon must be positive, got {horizon}")
        })?;
        ensure(steps >= 1, || "grid needs at least one step".to_string())?;
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Number of grid nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Closed-form futures (= forward) price.
pub fn futures_price(params: &CommodityParams, r: f64, state: &CommodityState, ttm: f64) -> Result<f64> {
    params.validate()?;
    if !(ttm >= 0.0) {
        return Err(Error::InvalidInput(format!("time to maturity must be >= 0, got {ttm}")));
    }
    if ttm == 0.0 {
        return Ok(state.spot);
    }
    let l = params.loadings(r, ttm);
    Ok(state.spot * (-state.convenience_yield * l.b + l.a).exp())
}

/// `E^Q[S_t / S_0]`, the futures price for maturity `t` over the spot.
pub fn expected_relative_price(params: &CommodityParams, r: f64, init: &CommodityState, t: f64) -> Result<f64> {
    let unit = CommodityState::new(1.0, init.convenience_yield);
    futures_price(params, r, &unit, t)
}

/// Pricing measure the paths were simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    RiskNeutral,
}

/// Exact one-step transition of `(log S, δ)` over a fixed step.
#[derive(Debug, Clone)]
pub struct ExactStepper {
    dt: f64,
    r: f64,
    sigma1: f64,
    kappa: f64,
    alpha_hat: f64,
    decay: f64,
    chol: [[f64; 3]; 3],
}

impl ExactStepper {
    pub fn new(params: &CommodityParams, r: f64, dt: f64) -> Result<Self> {
        params.validate()?;
        let (s1, s2, k, rho) = (params.sigma1, params.sigma2, params.kappa, params.rho);
        let h = dt;
        let one_m_e1 = -(-k * h).exp_m1();
        let one_m_e2 = -(-2.0 * k * h).exp_m1();
        // (X1, X2, X3) = (σ1 ΔW1, σ2 ∫(1-e^{-κ(h-u)})/κ dW2, σ2 ∫e^{-κ(h-u)} dW2)
        let v11 = s1 * s1 * h;
        let v22 = s2 * s2 / (k * k) * (h - 2.0 * one_m_e1 / k + one_m_e2 / (2.0 * k));
        let v33 = s2 * s2 * one_m_e2 / (2.0 * k);
        let v12 = rho * s1 * s2 / k * (h - one_m_e1 / k);
        let v13 = rho * s1 * s2 * one_m_e1 / k;
        let v23 = s2 * s2 / k * (one_m_e1 / k - one_m_e2 / (2.0 * k));
        let cov = [[v11, v12, v13], [v12, v22, v23], [v13, v23, v33]];
        Ok(Self {
            dt,
            r,
            sigma1: s1,
            kappa: k,
            alpha_hat: params.alpha_hat(),
            decay: (-k * h).exp(),
            chol: semidefinite_cholesky3(&cov),
        })
    }

    /// Advances `(log S, δ)` by one step using three standard normals.
    #[inline]
    pub fn step(&self, log_spot: f64, delta: f64, z: [f64; 3]) -> (f64, f64) {
        let l = &self.chol;
        let x1 = l[0][0] * z[0];
        let x2 = l[1][0] * z[0] + l[1][1] * z[1];
        let x3 = l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2];
        let dev = delta - self.alpha_hat;
        let mean_integral = self.alpha_hat * self.dt + dev * (1.0 - self.decay) / self.kappa;
        let next_log_spot = log_spot + (self.r - 0.5 * self.sigma1 * self.sigma1) * self.dt - mean_integral - x2 + x1;
        let next_delta = self.alpha_hat + dev * self.decay + x3;
        (next_log_spot, next_delta)
    }
}

/// Cholesky factor of a 3x3 positive semidefinite matrix; zero pivots
/// (degenerate noise, |ρ| = 1) give zero columns instead of NaNs.
fn semidefinite_cholesky3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    let scale = a[0][0].max(a[1][1]).max(a[2][2]);
    let tol = scale * 1e-13;
    for j in 0..3 {
        let mut d = a[j][j];
        for p in 0..j {
            d -= l[j][p] * l[j][p];
        }
        if d <= tol {
            continue;
        }
        let piv = d.sqrt();
        l[j][j] = piv;
        for i in (j + 1)..3 {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            l[i][j] = s / piv;
        }
    }
    l
}

/// One simulated commodity: parameters plus initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommoditySpec {
    pub params: CommodityParams,
    pub init: CommodityState,
}

/// Monte Carlo panel of state paths on a time grid.
///
/// Values are stored row-major as `[path][date][component]`, where the
/// components are `(spot, yield)` for each commodity in order, so `dim` is
/// 2 for salmon alone and 4 for salmon and soy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    measure: Measure,
    values: Vec<f64>,
}

impl PathSet {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn n_commodities(&self) -> usize {
        self.dim / 2
    }

    /// Full state of path `p` at date `k`.
    #[inline]
    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let start = (p * self.grid.len() + k) * self.dim;
        &self.values[start..start + self.dim]
    }

    #[inline]
    pub fn spot(&self, p: usize, k: usize, commodity: usize) -> f64 {
        self.state(p, k)[2 * commodity]
    }

    #[inline]
    pub fn convenience_yield(&self, p: usize, k: usize, commodity: usize) -> f64 {
        self.state(p, k)[2 * commodity + 1]
    }

    /// All dates of path `p`, flattened `[date][component]`.
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.grid.len() * self.dim;
        &self.values[p * len..(p + 1) * len]
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps only the first commodity (salmon) of a multi-commodity set.
    pub fn first_commodity(&self) -> PathSet {
        if self.dim == 2 {
            return self.clone();
        }
        let nodes = self.grid.len();
        let mut values = Vec::with_capacity(self.n_paths * nodes * 2);
        for chunk in self.values.chunks_exact(self.dim) {
            values.extend_from_slice(&chunk[..2]);
        }
        PathSet {
            grid: self.grid,
            dim: 2,
            n_paths: self.n_paths,
            seed: self.seed,
            measure: self.measure,
            values,
        }
    }
}

/// Simulates one commodity (`dim = 2`) on `grid`.
pub fn simulate(
    params: &CommodityParams,
    r: f64,
    init: &CommodityState,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    simulate_many(
        &[CommoditySpec {
            params: *params,
            init: *init,
        }],
        r,
        grid,
        n_paths,
        seed,
    )
}

/// Simulates salmon and soy as two independent commodities (`dim = 4`).
pub fn simulate_pair(
    salmon: &CommoditySpec,
    soy: &CommoditySpec,
    r: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    simulate_many(&[*salmon, *soy], r, grid, n_paths, seed)
}

/// Simulates independent commodities into one set.
///
/// Commodity `c` of path `p` draws from substream `p·8 + c`, so the first
/// commodity of a pair is bit-identical to simulating it alone under the
/// same seed.
pub fn simulate_many(specs: &[CommoditySpec], r: f64, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    let mut values = vec![0.0; n_paths * grid.len() * specs.len() * 2];
    simulate_into(specs, r, grid, 0, seed, &mut values)?;
    Ok(PathSet {
        grid: *grid,
        dim: specs.len() * 2,
        n_paths,
        seed,
        measure: Measure::RiskNeutral,
        values,
    })
}

/// Simulates paths `first_path..first_path + n` into `out` (length
/// `n·(N+1)·dim`). Used to stream very large panels in chunks.
pub fn simulate_into(
    specs: &[CommoditySpec],
    r: f64,
    grid: &TimeGrid,
    first_path: u64,
    seed: u64,
    out: &mut [f64],
) -> Result<()> {
    if specs.is_empty() || specs.len() > 8 {
        return Err(Error::InvalidInput(format!(
            "between 1 and 8 commodities supported, got {}",
            specs.len()
        )));
    }
    let dim = specs.len() * 2;
    let nodes = grid.len();
    let row = nodes * dim;
    if !out.len().is_multiple_of(row) {
        return Err(Error::InvalidInput(
            "output buffer is not a whole number of paths".into(),
        ));
    }
    for s in specs {
        if !(s.init.spot > 0.0) || !s.init.convenience_yield.is_finite() {
            return Err(Error::InvalidInput(format!("invalid initial state {:?}", s.init)));
        }
    }
    let steppers = specs
        .iter()
        .map(|s| ExactStepper::new(&s.params, r, grid.dt()))
        .collect::<Result<Vec<_>>>()?;

    out.par_chunks_mut(row).enumerate().for_each(|(i, path)| {
        let p = first_path + i as u64;
        for (c, (spec, stepper)) in specs.iter().zip(&steppers).enumerate() {
            let mut rng = rng::substream(seed, p * 8 + c as u64);
            let mut log_s = spec.init.spot.ln();
            let mut delta = spec.init.convenience_yield;
            path[2 * c] = spec.init.spot;
            path[2 * c + 1] = delta;
            for k in 1..nodes {
                let z = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                (log_s, delta) = stepper.step(log_s, delta, z);
                path[k * dim + 2 * c] = log_s.exp();
                path[k * dim + 2 * c + 1] = delta;
            }
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn soy_low() -> CommodityParams {
        CommodityParams::new(0.5, 0.4, 1.2, 0.06, 0.14, 0.44).unwrap()
    }

    #[test]
    fn zero_maturity_returns_spot() {
        let p = soy_low();
        let s = CommodityState::new(1500.0, 0.3);
        assert_eq!(futures_price(&p, 0.0303, &s, 0.0).unwrap(), 1500.0);
        assert_eq!(p.loadings(0.0303, 0.0).a, 0.0);
    }

    #[test]
    fn futures_linear_in_spot() {
        let p = soy_low();
        let f1 = futures_price(&p, 0.0303, &CommodityState::new(700.0, 0.1), 1.3).unwrap();
        let f2 = futures_price(&p, 0.0303, &CommodityState::new(1400.0, 0.1), 1.3).unwrap();
        assert_relative_eq!(f2, 2.0 * f1, max_relative = 1e-14);
    }

    #[test]
    fn rejects_negative_maturity_and_bad_params() {
        let p = soy_low();
        let s = CommodityState::new(1.0, 0.0);
        assert!(futures_price(&p, 0.03, &s, -0.1).is_err());
        let mut bad = p;
        bad.kappa = 0.0;
        assert!(futures_price(&bad, 0.03, &s, 1.0).is_err());
        assert!(CommodityParams::new(0.2, 0.2, 1.0, 0.0, -0.1, 0.0).is_err());
        assert!(CommodityParams::with_signed_premium(0.2, 0.2, 1.0, 0.0, -0.1, 0.0).is_ok());
        assert!(CommodityParams::new(0.2, 0.2, 1.0, 0.0, 0.1, 1.2).is_err());
    }

    #[test]
    fn alpha_hat_tracks_fields() {
        let mut p = soy_low();
        assert_relative_eq!(p.alpha_hat(), 0.06 - 0.14 / 1.2);
        p.lambda = 0.0;
        assert_eq!(p.alpha_hat(), 0.06);
    }

    #[test]
    fn deterministic_relative_price() {
        let p = CommodityParams::new(0.0, 0.0, 1.2, 0.06, 0.0, 0.0).unwrap();
        let init = CommodityState::new(1.0, 0.06);
        for t in [0.0, 0.5, 1.5, 3.0] {
            let e = expected_relative_price(&p, 0.0303, &init, t).unwrap();
            assert_relative_eq!(e, ((0.0303 - 0.06) * t).exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn degenerate_noise_path_is_deterministic() {
        let p = CommodityParams::new(0.0, 0.0, 2.6, 0.02, 0.01, 0.9).unwrap();
        let ah = p.alpha_hat();
        let init = CommodityState::new(64.0, ah);
        let grid = TimeGrid::new(3.0, 72).unwrap();
        let set = simulate(&p, 0.0303, &init, &grid, 3, 11).unwrap();
        for path in 0..3 {
            for k in 0..=72 {
                let t = grid.time(k);
                assert_relative_eq!(set.convenience_yield(path, k, 0), ah, max_relative = 1e-14);
                assert_relative_eq!(
                    set.spot(path, k, 0),
                    64.0 * ((0.0303 - ah) * t).exp(),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn first_commodity_of_pair_matches_single_simulation() {
        let salmon = CommoditySpec {
            params: CommodityParams::new(0.23, 0.75, 2.6, 0.02, 0.01, 0.9).unwrap(),
            init: CommodityState::new(64.125, 0.57),
        };
        let soy = CommoditySpec {
            params: soy_low(),
            init: CommodityState::new(1.0, 0.0),
        };
        let grid = TimeGrid::new(3.0, 12).unwrap();
        let pair = simulate_pair(&salmon, &soy, 0.0303, &grid, 50, 5).unwrap();
        let alone = simulate(&salmon.params, 0.0303, &salmon.init, &grid, 50, 5).unwrap();
        assert_eq!(pair.first_commodity(), alone);
        assert_eq!(pair.state(7, 0), &[64.125, 0.57, 1.0, 0.0]);
    }

    #[test]
    fn chunked_simulation_matches_whole() {
        let spec = CommoditySpec {
            params: soy_low(),
            init: CommodityState::new(1.0, 0.0),
        };
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let whole = simulate_many(&[spec], 0.03, &grid, 10, 3).unwrap();
        let row = grid.len() * 2;
        let mut tail = vec![0.0; 4 * row];
        simulate_into(&[spec], 0.03, &grid, 6, 3, &mut tail).unwrap();
        assert_eq!(&whole.raw_values()[6 * row..], &tail[..]);
    }

    #[test]
    fn zero_paths_rejected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!(simulate(&soy_low(), 0.03, &CommodityState::new(1.0, 0.0), &grid, 0, 1).is_err());
    }

    #[test]
    fn cholesky_handles_perfect_correlation() {
        let p = CommodityParams::new(0.3, 0.3, 1.0, 0.0, 0.0, 1.0).unwrap();
        let st = ExactStepper::new(&p, 0.0, 0.1).unwrap();
        let (s, d) = st.step(0.0, 0.0, [1.0, -1.0, 0.5]);
        assert!(s.is_finite() && d.is_finite());
    }
}
