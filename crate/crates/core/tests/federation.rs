//! Federated averaging against centralized steps, and calibration optimality.

mod common;

const EXACT: f64 = 1e-12;

#[test]
fn fedavg_equals_centralized_step_with_equal_batches() {
    for seed in 0..20 {
        let gap = common::fedavg_gap(seed, &[5, 5, 5, 5]);
        assert!(gap <= EXACT, "seed {seed}: {gap:e}");
    }
}

#[test]
fn fedavg_weights_by_sample_count() {
    for seed in 0..20 {
        let gap = common::fedavg_gap(seed, &[2, 7, 4]);
        assert!(gap <= EXACT, "seed {seed}: {gap:e}");
    }
}

#[test]
fn calibration_is_an_argmin_after_every_call() {
    for seed in 0..30 {
        let v = common::calibration_violation(seed);
        assert!(v <= EXACT, "seed {seed}: another cluster wins by {v:e}");
    }
}
