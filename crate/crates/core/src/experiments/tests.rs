use super::*;

fn small() -> GridConfig {
    GridConfig {
        m_train: 2000,
        m_valid: 2000,
        m_classifier: 4000,
        seed: 5,
        train: TrainConfig {
            min_batches: 5,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn one_by_two() -> ScenarioGrid {
    let mut g = ScenarioGrid::reference();
    g.salmon.truncate(1);
    g.soy.truncate(2);
    g
}

#[test]
fn reference_grid_layout() {
    let g = ScenarioGrid::reference();
    g.validate().unwrap();
    assert_eq!(g.coordinates().len(), 9);
    assert_eq!(g.coordinates()[1], (1, 0));
    let c = g.find("down up", "high vol").unwrap();
    assert_eq!(c.salmon.params.lambda, 0.2);
    assert_eq!(c.soy.params.sigma1, 2.0);
    assert_eq!(c.salmon.init.spot, g.farm.initial_salmon_value());
    assert!(g.find("down up", "extreme").is_err());

    let mut dup = g.clone();
    dup.soy[1].name = "low vol".into();
    assert!(dup.validate().is_err());
}

#[test]
fn feed_share_moves_initial_salmon_spot() {
    let c = ScenarioGrid::reference().find("down down", "low vol").unwrap();
    let half = c.with_feed_share(0.5);
    assert_eq!(half.farm.feed_cost, 0.5 * c.farm.production_cost);
    assert_eq!(
        half.salmon.init.spot - c.salmon.init.spot,
        half.farm.feed_cost - c.farm.feed_cost
    );
    // the reference farm already sits at a quarter
    assert_eq!(c.with_feed_share(0.25), c);
}

#[test]
fn seeds_depend_on_names_and_master() {
    let g = ScenarioGrid::reference();
    let a = g.cell(0, 0).unwrap().seeds(1);
    assert_eq!(a, g.cell(0, 0).unwrap().seeds(1));
    assert_ne!(a, g.cell(1, 0).unwrap().seeds(1));
    assert_ne!(a, g.cell(0, 0).unwrap().seeds(2));
    assert_ne!(a.training, a.validation);
}

#[test]
fn ratio_std_err_matches_perturbation() {
    // an exactly proportional pair has zero residual
    let b: Vec<f64> = (1..=100).map(|i| i as f64).collect();
    let a: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
    assert_eq!(ratio_std_err(&a, &b), 0.0);
    // otherwise sd(a - R b) / (sqrt(n) mean(b))
    let a2: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(i, x)| 2.0 * x + if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let (mb, _) = mean_and_se(&b);
    let r = mean_and_se(&a2).0 / mb;
    let resid: Vec<f64> = a2.iter().zip(&b).map(|(x, y)| x - r * y).collect();
    let sd = (resid.iter().map(|e| e * e).sum::<f64>() / 99.0).sqrt();
    assert!((ratio_std_err(&a2, &b) - sd / 10.0 / mb).abs() < 1e-12);
}

#[test]
fn small_grid_is_consistent_and_reproducible() {
    let g = one_by_two();
    let cfg = small();
    let rep = run_grid(&g, &cfg).unwrap();
    assert_eq!(rep.cells.len(), 2);
    for c in &rep.cells {
        assert!(c.error.is_none(), "{:?}", c.error);
        let v = c.values.as_ref().unwrap();
        assert_eq!(v.ri_tau, v.tau_stoch.v0 / v.tau_det.v0);
        assert_eq!(v.ri_f.unwrap(), v.f_stoch.unwrap().v0 / v.f_det.unwrap().v0);
        assert_eq!(v.accuracy_det.as_ref().unwrap().len(), g.farm.harvest_dates - 1);
        let s = v.stops;
        assert!((s.frac_stoch_earlier + s.frac_same + s.frac_stoch_later - 1.0).abs() < 1e-12);
    }
    let again = run_grid(&g, &cfg).unwrap();
    assert_eq!(cells_csv(&rep).unwrap(), cells_csv(&again).unwrap());
    assert_eq!(table4_csv(&rep).unwrap(), table4_csv(&again).unwrap());
    assert_eq!(table5_csv(&rep).unwrap(), table5_csv(&again).unwrap());

    let json = serde_json::to_string(&rep).unwrap();
    assert_eq!(serde_json::from_str::<GridReport>(&json).unwrap(), rep);

    // a cell's numbers do not depend on which other cells were run
    let mut single = g.clone();
    single.soy.remove(0);
    let alone = run_grid(&single, &cfg).unwrap();
    assert_eq!(alone.cells[0].values, rep.cells[1].values);
}

#[test]
fn table_layout() {
    let g = one_by_two();
    let rep = run_grid(
        &g,
        &GridConfig {
            classifiers: false,
            ..small()
        },
    )
    .unwrap();
    let t4 = table4_csv(&rep).unwrap();
    let lines: Vec<&str> = t4.lines().collect();
    assert_eq!(lines[0], "metric,soy,down down");
    assert_eq!(lines.len(), 1 + 2 * 2);
    let ri: f64 = lines[1].strip_prefix("ri_tau,low vol,").unwrap().parse().unwrap();
    assert_eq!(ri, rep.cells[0].values.as_ref().unwrap().ri_tau);
    // no classifier values: the RI^f cells are empty
    assert_eq!(lines[3], "ri_f,low vol,");
    let t5 = table5_csv(&rep).unwrap();
    assert_eq!(t5.lines().count(), 1 + 4 * 2);
    let cells = cells_csv(&rep).unwrap();
    assert_eq!(cells.lines().count(), 3);
    assert!(cells.lines().nth(1).unwrap().starts_with("down down,low vol,ok,"));
}

#[test]
fn failed_cells_are_marked_not_fatal() {
    let g = one_by_two();
    let cfg = GridConfig {
        classifiers: false,
        ..small()
    };
    let mut bad = g.cell(0, 0).unwrap();
    bad.farm.harvest_dates = 0;
    let rep = run_cell(&bad, &cfg);
    assert!(rep.values.is_none());
    assert!(rep.error.is_some());
}

#[test]
fn feed_share_sensitivity_shares_paths_with_the_grid() {
    let g = ScenarioGrid::reference();
    let cfg = GridConfig {
        classifiers: false,
        ..small()
    };
    let cell = g.find("down up", "medium vol").unwrap();
    let res = feed_share_sensitivity(&cell, &[0.25, 0.5], &cfg).unwrap();
    let grid_cell = run_cell(&cell, &cfg);
    assert_eq!(res[0].ri_tau, grid_cell.values.as_ref().map(|v| v.ri_tau));
    assert_eq!(res[1].feed_cost, 0.5 * g.farm.production_cost);
    assert!(feed_share_sensitivity(&cell, &[0.0], &cfg).is_err());
    assert!(feed_share_sensitivity(&cell, &[1.0], &cfg).is_err());
    let csv = sensitivity_csv(&res).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
