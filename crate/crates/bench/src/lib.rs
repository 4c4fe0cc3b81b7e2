//! Shared fixtures for the benchmarks.

use feedrisk_core::calibration::{synthetic_panel, SyntheticPanel, SyntheticSpec};
use feedrisk_core::experiments::{Cell, ScenarioGrid};
use feedrisk_core::{simulate_pair, HarvestProblem, PathSet};

/// The "down down" x "medium vol" cell of the reference grid.
pub fn reference_cell() -> Cell {
    ScenarioGrid::reference()
        .find("down down", "medium vol")
        .expect("reference cell exists")
}

pub fn problem(cell: &Cell) -> HarvestProblem {
    HarvestProblem::new(cell.farm, cell.rate).expect("valid farm")
}

pub fn paths(cell: &Cell, n: usize, seed: u64) -> PathSet {
    let grid = cell.farm.grid().expect("valid grid");
    simulate_pair(&cell.salmon, &cell.soy, cell.rate, &grid, n, seed).expect("simulation")
}

/// Daily soy panel on six maturities.
pub fn soy_panel(n_dates: usize) -> SyntheticPanel {
    let cell = reference_cell();
    synthetic_panel(&SyntheticSpec {
        params: cell.soy.params,
        rate: cell.rate,
        mu: cell.rate,
        dt: 1.0 / 252.0,
        n_dates,
        maturities: [1.0, 2.0, 3.0, 6.0, 9.0, 12.0].iter().map(|m| m / 12.0).collect(),
        noise_sd: 0.005,
        init_log_spot: 1500f64.ln(),
        init_convenience_yield: 0.0,
        seed: 1,
    })
    .expect("synthetic panel")
}
