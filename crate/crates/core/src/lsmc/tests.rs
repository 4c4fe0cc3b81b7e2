use super::*;
use crate::farm::{cumulative_feed_cost, DiscountReading, FarmParams};
use crate::model::{futures_price, simulate_pair, CommodityParams, CommoditySpec, CommodityState, TimeGrid};

const R: f64 = 0.0303;

fn salmon(lambda: f64, vol: bool) -> CommoditySpec {
    let (s1, s2) = if vol { (0.23, 0.75) } else { (0.0, 0.0) };
    CommoditySpec {
        params: CommodityParams::new(s1, s2, 2.6, 0.02, lambda, 0.9).unwrap(),
        init: CommodityState::new(FarmParams::reference(95.0).initial_salmon_value(), 0.57),
    }
}

fn soy(sigma1: f64, vol: bool) -> CommoditySpec {
    let (s1, s2) = if vol { (sigma1, 0.4) } else { (0.0, 0.0) };
    CommoditySpec {
        params: CommodityParams::new(s1, s2, 1.2, 0.06, 0.14, 0.44).unwrap(),
        init: CommodityState::new(1.0, 0.0),
    }
}

fn grid() -> TimeGrid {
    FarmParams::reference(95.0).grid().unwrap()
}

/// Exhaustive search over every grid date of the deterministic objective,
/// built from the closed-form futures curves only.
fn brute_force_best(salmon: &CommoditySpec, soy: &CommoditySpec) -> f64 {
    let fp = FarmParams::reference(95.0);
    let g = grid();
    let factors: Vec<f64> = g
        .times()
        .iter()
        .map(|&t| futures_price(&soy.params, R, &soy.init, t).unwrap())
        .collect();
    let cf = cumulative_feed_cost(&fp, R, &factors, &g, DiscountReading::Integrand).unwrap();
    (0..=g.steps)
        .map(|k| {
            let t = g.time(k);
            let s = futures_price(&salmon.params, R, &salmon.init, t).unwrap();
            let b = fp.biomass(t).unwrap();
            (-R * t).exp() * (s * b - fp.harvest_cost_total(t).unwrap()) - cf[k]
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn zero_volatility_matches_exhaustive_search() {
    let problem = HarvestProblem::new(FarmParams::reference(95.0), R).unwrap();
    for lambda in [0.01, 0.2, 0.6] {
        let (sa, so) = (salmon(lambda, false), soy(1.0, false));
        let paths = simulate_pair(&sa, &so, R, &grid(), 16, 3).unwrap();
        let best = brute_force_best(&sa, &so);
        for feed in [FeedModel::Stochastic, FeedModel::expected(&so, R, &grid()).unwrap()] {
            let set = if feed == FeedModel::Stochastic {
                paths.clone()
            } else {
                paths.first_commodity()
            };
            let (rule, out) = solve(&set, &problem, &feed).unwrap();
            assert!(!rule.rank_deficient_dates().is_empty());
            let rel = (out.v0 - best).abs() / best.abs();
            assert!(rel < 1e-10, "lambda={lambda}: {} vs {best} ({rel:e})", out.v0);
        }
    }
}

#[test]
fn zero_volatility_out_of_sample_equals_in_sample() {
    let problem = HarvestProblem::new(FarmParams::reference(95.0), R).unwrap();
    let (sa, so) = (salmon(0.2, false), soy(1.0, false));
    let train = simulate_pair(&sa, &so, R, &grid(), 8, 1).unwrap();
    let fresh = simulate_pair(&sa, &so, R, &grid(), 8, 2).unwrap();
    let (rule, insample) = solve(&train, &problem, &FeedModel::Stochastic).unwrap();
    let oos = evaluate(&rule, &fresh, &problem).unwrap();
    assert_eq!(insample.v0, oos.v0);
}

fn small_case(seed: u64) -> (HarvestProblem, PathSet) {
    let problem = HarvestProblem::new(FarmParams::reference(95.0), R).unwrap();
    let paths = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 4000, seed).unwrap();
    (problem, paths)
}

#[test]
fn solved_rule_dominates_fixed_dates_in_sample() {
    let (problem, paths) = small_case(21);
    let (_, out) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    let forced = apply_in_sample(
        &FixedDateRule {
            date: 72,
            state_dim: 4,
            training_seed: 21,
        },
        &paths,
        &problem,
        &FeedModel::Stochastic,
    )
    .unwrap();
    assert!(out.v0 >= forced.v0);
    for date in 0..=72 {
        let fixed = apply_in_sample(
            &FixedDateRule {
                date,
                state_dim: 4,
                training_seed: 21,
            },
            &paths,
            &problem,
            &FeedModel::Stochastic,
        )
        .unwrap();
        assert!(out.v0 >= fixed.v0 - 3.0 * out.std_err, "date {date}");
    }
}

#[test]
fn independent_walker_reproduces_v0_bit_for_bit() {
    let (problem, paths) = small_case(5);
    let fresh = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 3000, 6).unwrap();
    let (rule, _) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    let out = evaluate(&rule, &fresh, &problem).unwrap();

    let fp = FarmParams::reference(95.0);
    let g = grid();
    let mut total = 0.0;
    for p in 0..fresh.n_paths() {
        let mut tau = 72;
        for k in 1..72 {
            let h = problem.harvest_value(k, fresh.spot(p, k, 0));
            let mut stop = [false];
            rule.decide(k, fresh.state(p, k), &[h], &mut stop);
            if stop[0] {
                tau = k;
                break;
            }
        }
        let factor: Vec<f64> = (0..=72).map(|k| fresh.spot(p, k, 1) / fresh.spot(p, 0, 1)).collect();
        let cf = cumulative_feed_cost(&fp, R, &factor, &g, DiscountReading::Integrand).unwrap();
        let y = problem.harvest_value(tau, fresh.spot(p, tau, 0)) - cf[tau];
        assert_eq!(tau as u32, out.stop_index[p]);
        assert_eq!(y, out.values[p]);
        total += y;
    }
    assert_eq!(total / fresh.n_paths() as f64, out.v0);
}

#[test]
fn higher_feed_cost_never_raises_value_of_fixed_rule() {
    let (_, paths) = small_case(8);
    let (base_problem, _) = small_case(8);
    let (rule, _) = solve(&paths, &base_problem, &FeedModel::Stochastic).unwrap();
    let fresh = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 2000, 9).unwrap();
    let mut last = f64::INFINITY;
    for f0 in [0.0, 5.0, 11.875, 20.0, 40.0] {
        let mut fp = FarmParams::reference(95.0);
        fp.feed_cost = f0;
        let problem = HarvestProblem::new(fp, R).unwrap();
        let v = evaluate(&rule, &fresh, &problem).unwrap().v0;
        assert!(v <= last, "F0={f0}");
        last = v;
    }
}

#[test]
fn evaluation_is_pure_and_guards_inputs() {
    let (problem, paths) = small_case(11);
    let (rule, _) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    let fresh = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 500, 12).unwrap();
    assert_eq!(
        evaluate(&rule, &fresh, &problem).unwrap(),
        evaluate(&rule, &fresh, &problem).unwrap()
    );
    assert_eq!(evaluate(&rule, &paths, &problem), Err(Error::SeedReuse(11)));
    assert!(matches!(
        evaluate(&rule, &fresh.first_commodity(), &problem),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        solve(&paths.first_commodity(), &problem, &FeedModel::Stochastic),
        Err(Error::DimensionMismatch { .. })
    ));
    let det = FeedModel::expected(&soy(1.0, true), R, &grid()).unwrap();
    assert!(matches!(
        solve(&paths, &problem, &det),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn identical_rules_compare_to_one() {
    let (problem, paths) = small_case(13);
    let (rule, _) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    let fresh = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 800, 14).unwrap();
    let report = compare(&rule, &rule, &fresh, &problem).unwrap();
    assert_eq!(report.ri, 1.0);
    assert!(report.stop_diff.iter().all(|&d| d == 0));
    assert!(report.value_diff.iter().all(|&d| d == 0.0));
    assert_eq!(report.frac_same, 1.0);
    assert_eq!(report.stop_diff_histogram(), vec![(0, 800)]);
}

#[test]
fn deterministic_rule_reads_salmon_only() {
    let (problem, paths) = small_case(15);
    let det = FeedModel::expected(&soy(1.0, true), R, &grid()).unwrap();
    let (rule, insample) = solve(&paths.first_commodity(), &problem, &det).unwrap();
    assert_eq!(rule.state_dim, 2);
    assert_eq!(rule.basis_len, 6);
    assert_eq!(rule.dates.len(), 71);
    assert!(insample.v0.is_finite());
    let fresh = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 500, 16).unwrap();
    let out = evaluate(&rule, &fresh, &problem).unwrap();
    assert!(out.stop_index.iter().all(|&k| (1..=72).contains(&k)));
}

#[test]
fn exercise_at_zero_switch() {
    // A farm with no growth left to gain: harvesting now beats waiting.
    let mut fp = FarmParams::reference(95.0);
    fp.b = 1e-9;
    fp.mortality = 2.0;
    let problem = HarvestProblem::with_conventions(fp, R, DiscountReading::Integrand, true).unwrap();
    let paths = simulate_pair(&salmon(0.01, true), &soy(1.0, true), R, &grid(), 500, 17).unwrap();
    let (rule, out) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    assert!(rule.stop_at_zero);
    assert!(out.stop_index.iter().all(|&k| k == 0));

    let problem = HarvestProblem::new(fp, R).unwrap();
    let (rule, out) = solve(&paths, &problem, &FeedModel::Stochastic).unwrap();
    assert!(!rule.stop_at_zero);
    assert!(out.stop_index.iter().all(|&k| k >= 1));
}
