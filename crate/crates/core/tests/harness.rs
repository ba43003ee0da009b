use std::collections::BTreeMap;

use omnibeam::config::{ExperimentConfig, Scheme};
use omnibeam::experiment::{
    cdf_at, csv_rows, empirical_cdf, monte_carlo_sequential, monte_carlo_with_threads, read_csv, run_trial, TrialRecord,
};
use proptest::prelude::*;

fn tiny(trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.elements = 4;
    cfg.scenario.bits = Some(2);
    cfg.algorithm.outer_max_iters = 4;
    cfg.algorithm.sca_max_iters = 8;
    cfg.algorithm.randomization_trials = 30;
    cfg.run.schemes = Scheme::ALL.to_vec();
    cfg.run.trials = trials;
    cfg.run.seed = 40;
    cfg
}

fn comparable(records: &[TrialRecord]) -> Vec<String> {
    csv_rows(records)
        .into_iter()
        .map(|mut r| {
            r.wall_ms = 0.0;
            format!("{r:?}")
        })
        .collect()
}

#[test]
fn three_trials_give_three_records_per_scheme() {
    let out = monte_carlo_with_threads(&tiny(3), Some(1)).unwrap();
    assert_eq!(out.records.len(), 12);
    for s in &out.summary {
        assert_eq!(s.trials, 3);
        assert_eq!(s.jamming.len(), 3 * 4);
    }
    let seeds: Vec<u64> = out.records.iter().filter(|r| r.scheme == Scheme::Ios).map(|r| r.seed).collect();
    assert_eq!(seeds, vec![40, 41, 42]);
}

#[test]
fn csv_reruns_differ_only_in_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(2);
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        cfg.run.output = Some(dir.path().join(name));
        monte_carlo_with_threads(&cfg, Some(1)).unwrap();
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        files.push(text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0].len(), 1 + 2 * 4 * 4);
}

#[test]
fn summary_means_match_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(3);
    let path = dir.path().join("r.csv");
    cfg.run.output = Some(path.clone());
    let out = monte_carlo_with_threads(&cfg, Some(1)).unwrap();
    let mut per_trial: BTreeMap<(String, u64), f64> = BTreeMap::new();
    for row in read_csv(&path).unwrap() {
        per_trial.insert((row.scheme.name().to_string(), row.seed), row.sum_rate);
    }
    for s in &out.summary {
        let rates: Vec<f64> = per_trial.iter().filter(|((n, _), _)| n == s.scheme.name()).map(|(_, r)| *r).collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((mean - s.mean_sum_rate).abs() <= 1e-12 * mean.abs().max(1.0), "{}", s.scheme.name());
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = tiny(3);
    let one = monte_carlo_with_threads(&cfg, Some(1)).unwrap();
    let two = monte_carlo_with_threads(&cfg, Some(2)).unwrap();
    let seq = monte_carlo_sequential(&cfg).unwrap();
    assert_eq!(comparable(&one.records), comparable(&two.records));
    assert_eq!(comparable(&one.records), comparable(&seq));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn per_user_rates_add_up(seed in 0u64..1000) {
        let cfg = tiny(1);
        for r in run_trial(&cfg, seed).unwrap() {
            prop_assert_eq!(r.users.len(), 4);
            let total: f64 = r.users.iter().map(|u| u.rate).sum();
            prop_assert!((total - r.sum_rate).abs() <= 1e-9 * total.max(1.0));
            for u in &r.users {
                prop_assert!(u.rate >= 0.0 && u.jam_power >= 0.0 && u.tau > 0.0);
                prop_assert!((u.rate - (1.0 + u.sinr).log2()).abs() <= 1e-9 * u.rate.max(1.0));
            }
            prop_assert!(r.precoder.total_power() <= cfg.power.bs_watts() * (1.0 + 1e-9));
            if r.scheme == Scheme::NoRis {
                // no surface means the jamming threshold is met with equality
                for u in &r.users {
                    prop_assert!((u.jam_power * cfg.power.tau_ratio - u.tau).abs() <= 1e-9 * u.tau);
                }
            }
        }
    }

    #[test]
    fn cdf_is_a_step_function_onto_the_unit_interval(samples in prop::collection::vec(-120.0f64..-40.0, 1..60)) {
        let cdf = empirical_cdf(&samples).unwrap();
        prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        for &x in &samples {
            let below = samples.iter().filter(|&&s| s <= x).count() as f64 / samples.len() as f64;
            prop_assert!((cdf_at(&cdf, x) - below).abs() < 1e-12);
        }
        prop_assert_eq!(cdf_at(&cdf, -1e9), 0.0);
    }
}
