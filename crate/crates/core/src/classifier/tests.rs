use super::*;
use crate::farm::FarmParams;
use crate::lsmc::{apply_in_sample, FeedModel, FixedDateRule};
use crate::model::{simulate, simulate_pair, CommodityParams, CommoditySpec, CommodityState, TimeGrid};

const R: f64 = 0.0303;

fn small_paths(n: usize, seed: u64) -> PathSet {
    let p = CommodityParams::new(0.3, 0.5, 1.0, 0.05, 0.0, 0.3).unwrap();
    simulate(
        &p,
        R,
        &CommodityState::new(10.0, 0.05),
        &TimeGrid::new(1.0, 4).unwrap(),
        n,
        seed,
    )
    .unwrap()
}

/// Stops at date 1 on one side of a line in (log S, δ), never elsewhere.
struct Hyperplane;

impl StoppingRule for Hyperplane {
    fn state_dim(&self) -> usize {
        2
    }
    fn training_seed(&self) -> u64 {
        u64::MAX
    }
    fn decide(&self, k: usize, states: &[f64], _h: &[f64], stop: &mut [bool]) {
        for (s, st) in stop.iter_mut().zip(states.chunks_exact(2)) {
            *s = k == 1 && st[0].ln() - 2.0 * st[1] > 10f64.ln() + 0.05;
        }
    }
}

fn stops_of(rule: &impl StoppingRule, paths: &PathSet) -> StoppingOutcome {
    // a farm on the same four-step grid only to drive the walk
    let mut fp = FarmParams::reference(95.0);
    fp.horizon = 1.0;
    fp.harvest_dates = 4;
    let problem = HarvestProblem::new(fp, R).unwrap();
    let det = FeedModel::Deterministic { factors: vec![1.0; 5] };
    apply_in_sample(rule, paths, &problem, &det).unwrap()
}

#[test]
fn labeled_sets_of_a_fixed_date_rule() {
    let paths = small_paths(300, 1);
    let fixed = FixedDateRule {
        date: 2,
        state_dim: 2,
        training_seed: 0,
    };
    let sets = build_labeled_sets(&paths, &stops_of(&fixed, &paths), 2).unwrap();
    assert_eq!(sets.dates(), 3);
    assert_eq!(sets.exercise[1].len(), 300);
    assert!(sets.exercise[0].is_empty() && sets.exercise[2].is_empty());
    assert_eq!(sets.continuation[0].len(), 300);
    assert!(sets.continuation[1].is_empty() && sets.continuation[2].is_empty());
    assert_eq!(sets.no_exercise_dates(), vec![1, 3]);
}

#[test]
fn labeled_sets_partition_alive_paths() {
    let paths = small_paths(2000, 2);
    let out = stops_of(&Hyperplane, &paths);
    let sets = build_labeled_sets(&paths, &out, 2).unwrap();
    let never = out.stop_index.iter().filter(|&&t| t == 4).count();
    let stopped: usize = sets.exercise.iter().map(Vec::len).sum();
    assert_eq!(stopped + never, 2000);
    for k in 0..3 {
        let alive = out.stop_index.iter().filter(|&&t| t as usize > k).count();
        assert_eq!(sets.exercise[k].len() + sets.continuation[k].len(), alive);
        assert!(sets.exercise[k].iter().all(|p| !sets.continuation[k].contains(p)));
    }
}

#[test]
fn batches_are_balanced_and_cover_the_larger_class() {
    let mut r = rng::substream(5, 0);
    let mut plan = BatchPlan::new(7, 1000, 128, 0).unwrap();
    assert_eq!(plan.batches(), 8);
    let mut seen = vec![0usize; 1000];
    while let Some((e, c)) = plan.next_batch(&mut r) {
        assert_eq!(e.len(), 128);
        assert_eq!(c.len(), 128);
        assert!(e.iter().all(|&i| i < 7));
        c.iter().for_each(|&i| seen[i as usize] += 1);
    }
    assert!(seen.iter().all(|&s| s >= 1));

    let mut plan = BatchPlan::new(500, 3, 128, 20).unwrap();
    assert_eq!(plan.batches(), 20);
    let mut count = 0;
    while let Some((e, c)) = plan.next_batch(&mut r) {
        assert!(e.iter().all(|&i| i < 500) && c.iter().all(|&i| i < 3));
        count += 1;
    }
    assert_eq!(count, 20);
    assert!(BatchPlan::new(0, 3, 128, 0).is_err());
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        min_batches: 400,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn separable_labels_are_learned() {
    let train_paths = small_paths(20_000, 3);
    let sets = build_labeled_sets(&train_paths, &stops_of(&Hyperplane, &train_paths), 2).unwrap();
    let rule = train(&train_paths, &sets, FeedMode::Deterministic, &quick_config()).unwrap();
    assert!(matches!(rule.dates[0], DateClassifier::Network { .. }));
    assert_eq!(rule.dates[1], DateClassifier::AlwaysContinue);

    let fresh = small_paths(20_000, 4);
    let held = build_labeled_sets(&fresh, &stops_of(&Hyperplane, &fresh), 2).unwrap();
    let acc = held_out_accuracy(&rule, &fresh, &held).unwrap();
    let ba = acc[0].balanced_accuracy.unwrap();
    assert!(ba >= 0.99, "{ba}");
    assert!(acc[1].balanced_accuracy.is_none());
    assert_eq!(acc[1].agreement, Some(1.0));
}

#[test]
fn training_is_deterministic() {
    let paths = small_paths(3000, 6);
    let sets = build_labeled_sets(&paths, &stops_of(&Hyperplane, &paths), 2).unwrap();
    let cfg = TrainConfig {
        min_batches: 30,
        ..quick_config()
    };
    let a = train(&paths, &sets, FeedMode::Deterministic, &cfg).unwrap();
    let b = train(&paths, &sets, FeedMode::Deterministic, &cfg).unwrap();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 18, ..cfg };
    assert_ne!(a, train(&paths, &sets, FeedMode::Deterministic, &other).unwrap());

    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<ClassifierRule>(&json).unwrap(), a);
}

#[test]
fn degenerate_dates_and_decision_contract() {
    let paths = small_paths(500, 7);
    let fixed = FixedDateRule {
        date: 2,
        state_dim: 2,
        training_seed: 0,
    };
    let sets = build_labeled_sets(&paths, &stops_of(&fixed, &paths), 2).unwrap();
    let rule = train(&paths, &sets, FeedMode::Deterministic, &quick_config()).unwrap();
    assert_eq!(
        rule.dates,
        vec![
            DateClassifier::AlwaysContinue,
            DateClassifier::AlwaysExercise,
            DateClassifier::AlwaysContinue
        ]
    );
    assert_eq!(rule.decide_one(1, &[10.0, 0.1]).unwrap(), (false, 0.0));
    assert_eq!(rule.decide_one(2, &[10.0, 0.1]).unwrap(), (true, 1.0));
    assert!(matches!(
        rule.decide_one(1, &[10.0]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(rule.decide_one(4, &[10.0, 0.1]).is_err());
    assert!(exercises(0.5));
    assert!(!exercises(0.499_999));

    // the classifier reproduces the fixed rule exactly on fresh paths
    let fresh = small_paths(500, 8);
    assert_eq!(stops_of(&rule, &fresh).v0, stops_of(&fixed, &fresh).v0);
}

#[test]
fn mismatched_inputs_rejected() {
    let paths = small_paths(200, 9);
    let sets = build_labeled_sets(&paths, &stops_of(&Hyperplane, &paths), 2).unwrap();
    assert!(train(&paths, &sets, FeedMode::Stochastic, &quick_config()).is_err());
    let other = small_paths(200, 10);
    assert!(train(&other, &sets, FeedMode::Deterministic, &quick_config()).is_err());
    let short = StoppingOutcome::from_paths(vec![1; 10], vec![0.0; 10]);
    assert!(build_labeled_sets(&paths, &short, 2).is_err());
}

#[test]
fn reference_scenario_classifier_matches_lsmc_rule() {
    let salmon = CommoditySpec {
        params: CommodityParams::new(0.23, 0.75, 2.6, 0.02, 0.01, 0.9).unwrap(),
        init: CommodityState::new(FarmParams::reference(95.0).initial_salmon_value(), 0.57),
    };
    let soy = CommoditySpec {
        params: CommodityParams::new(1.0, 0.4, 1.2, 0.06, 0.14, 0.44).unwrap(),
        init: CommodityState::new(1.0, 0.0),
    };
    let problem = HarvestProblem::new(FarmParams::reference(95.0), R).unwrap();
    let grid = *problem.grid();
    let train_paths = simulate_pair(&salmon, &soy, R, &grid, 20_000, 31).unwrap();
    let fresh = simulate_pair(&salmon, &soy, R, &grid, 20_000, 32).unwrap();
    let (lsmc_rule, insample) = crate::lsmc::solve(&train_paths, &problem, &FeedModel::Stochastic).unwrap();
    let sets = build_labeled_sets(&train_paths, &insample, 4).unwrap();
    let rule = train(&train_paths, &sets, FeedMode::Stochastic, &TrainConfig::default()).unwrap();
    let v_lsmc = crate::lsmc::evaluate(&lsmc_rule, &fresh, &problem).unwrap();
    let v_cls = evaluate_classifier(&rule, &fresh, &problem).unwrap();
    // the 0.5% agreement needs the full training size; this is a smoke check
    let gap = (v_cls.v0 - v_lsmc.v0).abs() / v_lsmc.v0;
    assert!(gap <= 0.02, "{} vs {} ({gap})", v_cls.v0, v_lsmc.v0);
}
