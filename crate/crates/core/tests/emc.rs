use std::collections::HashSet;

use emc_probe::emc::{attempt_seed, avg_log10, search_with, EMCConfig, Growth, ProbeOutcome};
use proptest::prelude::*;

fn outcome(seed: u64, fit: bool) -> ProbeOutcome {
    ProbeOutcome { seed, fit, final_accuracy: if fit { 1.0 } else { 0.5 }, epochs_run: 1, report: None, error: None }
}

fn threshold_probe(t: usize) -> impl FnMut(usize, u64) -> emc_probe::Result<ProbeOutcome> {
    move |n, s| Ok(outcome(s, n <= t))
}

#[test]
fn attempt_seeds_are_distinct_per_size_and_attempt() {
    let mut seen = HashSet::new();
    for n in 1..200 {
        for a in 0..4 {
            assert!(seen.insert(attempt_seed(42, n, a)));
        }
    }
    assert_eq!(attempt_seed(1, 5, 0), attempt_seed(1, 5, 0));
}

#[test]
fn retries_stop_at_first_fit() {
    let cfg = EMCConfig { retry_seeds: 3, max_n: Some(8), ..EMCConfig::new(8) };
    let mut calls = 0;
    let r = search_with(&cfg, 8, |_, s| {
        calls += 1;
        Ok(outcome(s, calls == 2))
    })
    .unwrap();
    assert_eq!(r.trace[0].attempts.len(), 2);
    assert!(r.saturated && r.emc == 8);
}

#[test]
fn exhausted_retries_give_below_start() {
    let cfg = EMCConfig { retry_seeds: 2, ..EMCConfig::new(4) };
    let r = search_with(&cfg, 64, |_, s| Ok(outcome(s, false))).unwrap();
    assert!(r.below_start && !r.saturated);
    assert_eq!(r.emc, 0);
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.trace[0].attempts.len(), 3);
}

#[test]
fn probe_errors_propagate() {
    let cfg = EMCConfig::new(1);
    assert!(search_with(&cfg, 4, |_, _| Err(emc_probe::Error::Dataset("boom".into()))).is_err());
}

#[test]
fn linear_growth_stops_at_first_failure_even_if_larger_sizes_fit() {
    let cfg = EMCConfig { growth: Growth::Linear { step: 2 }, retry_seeds: 0, ..EMCConfig::new(2) };
    // Non-monotone: 6 fails but 8 would fit.
    let r = search_with(&cfg, 20, |n, s| Ok(outcome(s, n != 6))).unwrap();
    assert_eq!(r.emc, 4);
    assert_eq!(r.trace.iter().map(|t| t.n).collect::<Vec<_>>(), vec![2, 4, 6]);
}

#[test]
fn average_log_emc() {
    assert!((avg_log10(&[10, 1000]).unwrap() - 2.0).abs() < 1e-15);
    assert!(avg_log10(&[10, 0]).is_err());
    assert!(avg_log10(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn both_schedules_find_any_threshold(start in 1usize..20, extra in 0usize..3000, t_off in 0usize..4000, step in 1usize..7) {
        let max_n = start + extra;
        let t = (start + t_off).min(max_n);
        for growth in [Growth::DoubleThenBisect, Growth::Linear { step: 1 }] {
            let cfg = EMCConfig { growth, retry_seeds: 0, ..EMCConfig::new(start) };
            let r = search_with(&cfg, max_n, threshold_probe(t)).unwrap();
            prop_assert_eq!(r.emc, t);
            prop_assert_eq!(r.saturated, t == max_n);
            // The reported EMC was itself probed and fit.
            prop_assert!(r.trace.iter().any(|e| e.n == t && e.fit));
        }
        // Coarser linear steps land on the last multiple below the threshold.
        let cfg = EMCConfig { growth: Growth::Linear { step }, retry_seeds: 0, ..EMCConfig::new(start) };
        let r = search_with(&cfg, max_n, threshold_probe(t)).unwrap();
        let expect = if t == max_n { max_n } else { start + (t - start) / step * step };
        prop_assert_eq!(r.emc, expect);
    }

    #[test]
    fn bisection_probe_count_is_logarithmic(t in 1usize..100_000) {
        let cfg = EMCConfig { retry_seeds: 0, ..EMCConfig::new(1) };
        let r = search_with(&cfg, 100_000, threshold_probe(t)).unwrap();
        prop_assert_eq!(r.emc, t);
        prop_assert!(r.trace.len() <= 2 * 17 + 1);
    }
}
