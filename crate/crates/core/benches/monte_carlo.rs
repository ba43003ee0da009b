use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use omnibeam::config::{ExperimentConfig, Scheme};
use omnibeam::experiment::{monte_carlo_sequential, monte_carlo_with_threads};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.elements = 4;
    cfg.scenario.bits = Some(2);
    cfg.run.schemes = Scheme::ALL.to_vec();
    cfg.run.trials = 8;
    cfg
}

fn bench_trials(c: &mut Criterion) {
    let cfg = small();
    let mut group = c.benchmark_group("monte_carlo_8_trials_m4");
    // without the `parallel` feature both paths are sequential
    group.bench_function("rayon", |b| b.iter(|| monte_carlo_with_threads(black_box(&cfg), None).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| monte_carlo_sequential(black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_trials
}
criterion_main!(benches);
