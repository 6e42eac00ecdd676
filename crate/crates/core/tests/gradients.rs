//! Analytic gradients against central finite differences over many seeds.

mod common;

use common::{central, composite_errors, rel_err, rng, uniform, GRADIENT_SEEDS as SEEDS};
use fedclust::clustergan::Quality;
use fedclust::nn::{backward, backward_trace, cross_entropy_grad, forward_trace, softmax, Arch, Gradients, ParamSet};
use rand::Rng as _;

fn check_network(arch: Arch, label: &str, tol: f64) {
    let mut max_param = 0.0f64;
    let mut max_input = 0.0f64;
    for seed in 0..SEEDS {
        let (e, ex) = common::network_errors(&arch, label, seed);
        assert!(e < tol, "{label} seed {seed}: parameter gradient error {e:e}");
        assert!(ex < tol, "{label} seed {seed}: input gradient error {ex:e}");
        max_param = max_param.max(e);
        max_input = max_input.max(ex);
    }
    eprintln!("{label}: worst parameter error {max_param:e}, input error {max_input:e}");
}

#[test]
fn dense_stack() {
    check_network(common::dense_arch(), "dense", 1e-4);
}

#[test]
fn dense_leaky_linear_head() {
    check_network(common::leaky_arch(), "dense-leaky", 1e-4);
}

#[test]
fn lstm_forecaster() {
    check_network(common::lstm_arch(), "lstm", 1e-4);
}

#[test]
fn backward_matches_trace_path() {
    let arch = Arch::lstm_forecaster(5, 3, 2).unwrap();
    for seed in 0..SEEDS {
        let mut r = rng("paths", seed);
        let params = ParamSet::init(arch.clone(), &mut r);
        let x = uniform(&mut r, 5, 0.0, 1.0);
        let up = uniform(&mut r, 2, -1.0, 1.0);
        let (_, trace) = forward_trace(&params, &x).unwrap();
        let mut g = Gradients::zeros_like(&params);
        backward_trace(&params, &trace, &up, &mut g).unwrap();
        assert_eq!(g.values(), backward(&params, &x, &up).unwrap().values());
    }
}

#[test]
fn softmax_pullback() {
    for seed in 0..SEEDS {
        let e = common::softmax_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e:e}");
    }
}

#[test]
fn cross_entropy_through_softmax() {
    for seed in 0..SEEDS {
        let e = common::cross_entropy_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e:e}");
    }
}

#[test]
fn cross_entropy_on_probabilities() {
    for seed in 0..SEEDS {
        let mut r = rng("ce-direct", seed);
        let n = 2 + (seed as usize % 5);
        let p = softmax(&uniform(&mut r, n, -2.0, 2.0));
        let hot = r.random_range(0..n);
        let mut target = vec![0.0; n];
        target[hot] = 1.0;
        let analytic = cross_entropy_grad(&p, &target);
        // the loss only reads the hot coordinate, so perturb that one alone
        let mut q = p.clone();
        let numeric = central(&mut q, hot, &mut |v| -v[hot].ln());
        assert!(rel_err(analytic[hot], numeric) < 1e-4, "seed {seed}");
        assert!(analytic.iter().enumerate().all(|(i, &g)| i == hot || g == 0.0));
    }
}

#[test]
fn mse() {
    for seed in 0..SEEDS {
        let e = common::mse_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e:e}");
    }
}

#[test]
fn clustergan_composite() {
    let mut worst_seen = 0.0f64;
    for seed in 0..SEEDS {
        for quality in [Quality::Vanilla, Quality::Wasserstein] {
            let errors = composite_errors(seed, quality);
            for (name, e) in ["discriminator", "generator", "encoder"].iter().zip(errors) {
                assert!(e < 1e-3, "seed {seed} {quality:?} {name}: {e:e}");
                worst_seen = worst_seen.max(e);
            }
        }
    }
    eprintln!("composite: worst error {worst_seen:e}");
}
