use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use feedrisk_bench::{paths, problem, reference_cell, soy_panel};
use feedrisk_core::calibration::{cortazar_inner_logs, kalman_filter, KalmanSpec};
use feedrisk_core::classifier::network::{AdamConfig, Architecture, Mlp, Trainer};
use feedrisk_core::lsmc::{evaluate, solve};
use feedrisk_core::{rng, FeedModel};
use std::hint::black_box;

fn simulation(c: &mut Criterion) {
    let cell = reference_cell();
    c.bench_function("simulate_pair 10k paths x 73 dates", |b| {
        b.iter(|| paths(&cell, 10_000, black_box(3)))
    });
}

fn lsmc(c: &mut Criterion) {
    let cell = reference_cell();
    let problem = problem(&cell);
    let train = paths(&cell, 10_000, 1);
    let fresh = paths(&cell, 10_000, 2);
    let mut g = c.benchmark_group("lsmc 10k paths");
    g.sample_size(10);
    g.bench_function("solve stochastic", |b| {
        b.iter(|| solve(&train, &problem, &FeedModel::Stochastic).unwrap())
    });
    let (rule, _) = solve(&train, &problem, &FeedModel::Stochastic).unwrap();
    g.bench_function("evaluate", |b| b.iter(|| evaluate(&rule, &fresh, &problem).unwrap()));
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let syn = soy_panel(1000);
    let cell = reference_cell();
    let mats: Vec<f64> = syn.panel.dates()[0].quotes.iter().map(|q| q.ttm).collect();
    let fixed = syn.panel.to_fixed_grid(&mats).unwrap();
    let spec = KalmanSpec::new(
        &cell.soy.params,
        cell.rate,
        cell.rate,
        1.0 / 252.0,
        &mats,
        &vec![0.005; mats.len()],
        [syn.log_spot[0], 0.0],
        [[1.0, 0.0], [0.0, 1.0]],
    )
    .unwrap();
    c.bench_function("kalman_filter 1000 dates x 6 maturities", |b| {
        b.iter(|| kalman_filter(&spec, black_box(&fixed.log_prices)).unwrap())
    });
    c.bench_function("cortazar_inner 6 maturities", |b| {
        b.iter(|| cortazar_inner_logs(&cell.soy.params, cell.rate, &mats, black_box(&fixed.log_prices[0])).unwrap())
    });
}

fn classifier(c: &mut Criterion) {
    let arch = Architecture {
        inputs: 4,
        bn_eps: 1e-3,
    };
    let mut r = rng::substream(0, 0);
    let net = Mlp::<f32>::new(arch, &mut r);
    let x = ndarray::Array2::from_shape_fn((256, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0);
    let labels: Vec<u8> = (0..256).map(|i| (i % 2) as u8).collect();
    c.bench_function("classifier step, batch 256, 4 inputs", |b| {
        b.iter_batched_ref(
            || Trainer::new(net.clone(), AdamConfig::default(), 0.99),
            |t| t.step(&x.view(), &labels),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, simulation, lsmc, calibration, classifier);
criterion_main!(benches);
