//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fedclust::clustergan::{
    discriminator_gradients, generator_encoder_gradients, sample_latent, GanTriple, LatentCode, LatentConfig, Quality,
};
use fedclust::data::{ClassId, Client, ClientPool, ForecastShape, TimeSeriesSample};
use fedclust::hypcluster::{
    batch_gradients, calibrate, forecast_loss, train_cluster_round, ClientOptimizers, ClusterRegistry, Phase2Config,
};
use fedclust::nn::{
    backward_trace, cross_entropy_grad, cross_entropy_loss, forward, forward_trace, mse_grad, mse_loss, softmax,
    softmax_backward, Activation, Arch, Gradients, OptimizerConfig, OptimizerKind, OptimizerState, ParamSet,
};
use fedclust::rng::{Rng, SeedTree};
use fedclust::ClusterId;
use rand::Rng as _;

pub const GRADIENT_SEEDS: u64 = 100;
const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn central(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + STEP;
    let up = f(x);
    x[i] = orig - STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * STEP)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn worst(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| rel_err(analytic[i], central(&mut x, i, &mut f)))
        .fold(0.0, f64::max)
}

pub fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rng(label: &str, seed: u64) -> Rng {
    SeedTree::new(seed).named(label).rng()
}

fn with_values(params: &ParamSet, values: &[f64]) -> ParamSet {
    ParamSet::new(params.arch().clone(), values.to_vec()).unwrap()
}

/// Worst parameter and input gradient errors of an MSE-trained network.
pub fn network_errors(arch: &Arch, label: &str, seed: u64) -> (f64, f64) {
    let mut r = rng(label, seed);
    let params = ParamSet::init(arch.clone(), &mut r);
    let x = uniform(&mut r, arch.input_width(), 0.0, 1.0);
    let t = uniform(&mut r, arch.output_width(), 0.0, 1.0);
    let (y, trace) = forward_trace(&params, &x).unwrap();
    let mut grads = Gradients::zeros_like(&params);
    let dx = backward_trace(&params, &trace, &mse_grad(&y, &t), &mut grads).unwrap();
    let e = worst(params.values(), grads.values(), |v| {
        mse_loss(&forward(&with_values(&params, v), &x).unwrap(), &t).unwrap()
    });
    let ex = worst(&x, &dx, |xv| mse_loss(&forward(&params, xv).unwrap(), &t).unwrap());
    (e, ex)
}

pub fn dense_arch() -> Arch {
    Arch::mlp(5, &[7, 6], 3, Activation::Tanh, Activation::Sigmoid).unwrap()
}

pub fn leaky_arch() -> Arch {
    Arch::mlp(4, &[6], 2, Activation::LeakyRelu, Activation::Linear).unwrap()
}

pub fn lstm_arch() -> Arch {
    Arch::lstm_forecaster(6, 4, 3).unwrap()
}

pub fn softmax_error(seed: u64) -> f64 {
    let mut r = rng("softmax", seed);
    let n = 2 + (seed as usize % 5);
    let z = uniform(&mut r, n, -3.0, 3.0);
    let up = uniform(&mut r, n, -1.0, 1.0);
    let analytic = softmax_backward(&softmax(&z), &up);
    worst(&z, &analytic, |zv| softmax(zv).iter().zip(&up).map(|(p, u)| p * u).sum())
}

/// Cross-entropy pulled back through softmax to the logits.
pub fn cross_entropy_error(seed: u64) -> f64 {
    let mut r = rng("ce", seed);
    let n = 2 + (seed as usize % 5);
    let z = uniform(&mut r, n, -3.0, 3.0);
    let mut target = vec![0.0; n];
    target[r.random_range(0..n)] = 1.0;
    let p = softmax(&z);
    let analytic = softmax_backward(&p, &cross_entropy_grad(&p, &target));
    worst(&z, &analytic, |zv| cross_entropy_loss(&softmax(zv), &target).unwrap())
}

pub fn mse_error(seed: u64) -> f64 {
    let mut r = rng("mse", seed);
    let n = 1 + (seed as usize % 8);
    let y = uniform(&mut r, n, -2.0, 2.0);
    let t = uniform(&mut r, n, -2.0, 2.0);
    worst(&y, &mse_grad(&y, &t), |v| mse_loss(v, &t).unwrap())
}

pub fn gan_setup(seed: u64, quality: Quality) -> (LatentConfig, GanTriple, Vec<Vec<f64>>, Vec<LatentCode>) {
    let cfg = LatentConfig {
        k: 3,
        noise_dim: 4,
        sigma: 0.5,
        beta_n: 2.0,
        beta_c: 3.0,
        quality,
        ..LatentConfig::default()
    };
    let mut r = rng("gan", seed);
    let triple = GanTriple::init(&cfg, 6, &[8, 5], Activation::LeakyRelu, &mut r).unwrap();
    let real = (0..4).map(|_| uniform(&mut r, 6, 0.0, 1.0)).collect();
    let latents = (0..4).map(|_| sample_latent(&cfg, &mut r)).collect();
    (cfg, triple, real, latents)
}

/// Worst discriminator, generator and encoder gradient errors of the joint
/// objective.
pub fn composite_errors(seed: u64, quality: Quality) -> [f64; 3] {
    let (cfg, triple, real, latents) = gan_setup(seed, quality);
    let real_refs: Vec<&[f64]> = real.iter().map(Vec::as_slice).collect();

    let (_, d_grads) = discriminator_gradients(&triple, &real_refs, &latents, &cfg).unwrap();
    let e_d = worst(triple.discriminator.values(), d_grads.values(), |v| {
        let mut t = triple.clone();
        t.discriminator = with_values(&triple.discriminator, v);
        discriminator_gradients(&t, &real_refs, &latents, &cfg).unwrap().0
    });
    let (_, g_grads, e_grads) = generator_encoder_gradients(&triple, &latents, &cfg).unwrap();
    let e_g = worst(triple.generator.values(), g_grads.values(), |v| {
        let mut t = triple.clone();
        t.generator = with_values(&triple.generator, v);
        generator_encoder_gradients(&t, &latents, &cfg).unwrap().0.g_e_loss
    });
    let e_e = worst(triple.encoder.values(), e_grads.values(), |v| {
        let mut t = triple.clone();
        t.encoder = with_values(&triple.encoder, v);
        generator_encoder_gradients(&t, &latents, &cfg).unwrap().0.g_e_loss
    });
    [e_d, e_g, e_e]
}

fn series(rng: &mut Rng, len: usize, level: f64) -> TimeSeriesSample {
    TimeSeriesSample::new((0..len).map(|_| level + 0.2 * rng.random::<f64>()).collect())
}

/// Clients holding `sizes[i]` training windows around `levels[i]`.
pub fn level_pool(seed: u64, sizes: &[usize], levels: &[f64]) -> ClientPool {
    let mut rng = SeedTree::new(seed).named("pool").rng();
    let clients = sizes
        .iter()
        .zip(levels)
        .enumerate()
        .map(|(id, (&n, &level))| {
            let train: Vec<_> = (0..n).map(|_| series(&mut rng, 6, level)).collect();
            Client {
                id,
                cluster_samples: train.clone(),
                train,
                overwrite: Vec::new(),
                test: vec![series(&mut rng, 6, level)],
            }
        })
        .collect();
    ClientPool::new(clients, ForecastShape::from_fraction(6, 0.5).unwrap()).unwrap()
}

pub fn sgd(lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: lr,
        l2: 0.0,
        ..OptimizerConfig::default()
    }
}

/// Largest coordinate gap between one federated round (all clients, one local
/// step, full batches) and one centralized step on the sample-weighted mean
/// gradient.
pub fn fedavg_gap(seed: u64, sizes: &[usize]) -> f64 {
    let levels: Vec<f64> = (0..sizes.len()).map(|i| 0.1 * i as f64).collect();
    let pool = level_pool(seed, sizes, &levels);
    let arch = Arch::lstm_forecaster(3, 4, 3).unwrap();
    let assignment: BTreeMap<usize, ClusterId> = pool.ids().into_iter().map(|c| (c, 1)).collect();
    let mut reg = ClusterRegistry::with_fresh_models(assignment, [1], &arch, &SeedTree::new(seed)).unwrap();
    let start = reg.model(1).unwrap().clone();
    let cfg = Phase2Config {
        local_steps: 1,
        batch_size: *sizes.iter().max().unwrap(),
        optimizer: sgd(0.05),
        ..Phase2Config::default()
    };
    let mut opts = ClientOptimizers::default();
    train_cluster_round(&mut reg, &pool, &pool.ids(), &cfg, &mut opts, &SeedTree::new(seed).named("round")).unwrap();

    let total: f64 = sizes.iter().sum::<usize>() as f64;
    let mut mean = vec![0.0; start.len()];
    for c in pool.clients() {
        let batch: Vec<&TimeSeriesSample> = c.train.iter().collect();
        let g = batch_gradients(&start, &batch, pool.shape).unwrap().1;
        let w = c.train.len() as f64 / total;
        mean.iter_mut().zip(g.values()).for_each(|(m, v)| *m += w * v);
    }
    let mut central = start.clone();
    OptimizerState::new(sgd(0.05), central.len())
        .step(&mut central, &Gradients::from_values(mean))
        .unwrap();
    reg.model(1)
        .unwrap()
        .values()
        .iter()
        .zip(central.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest amount by which any other cluster's model beats a client's
/// assigned model right after calibration, over several train/calibrate
/// cycles. Zero or negative means every calibration was an exact argmin.
pub fn calibration_violation(seed: u64) -> f64 {
    let arch = Arch::lstm_forecaster(3, 3, 3).unwrap();
    let levels = [0.0, 0.0, 0.4, 0.4, 0.8, 0.8, 0.2, 0.6];
    let pool = level_pool(seed, &[4; 8], &levels);
    let mut rng = SeedTree::new(seed).named("assign").rng();
    let assignment: BTreeMap<usize, ClusterId> = pool.ids().into_iter().map(|c| (c, rng.random_range(1..=3))).collect();
    let mut reg = ClusterRegistry::with_fresh_models(assignment, 1..=3, &arch, &SeedTree::new(seed)).unwrap();
    let cfg = Phase2Config {
        optimizer: sgd(0.1),
        ..Phase2Config::default()
    };
    let mut opts = ClientOptimizers::default();
    let mut violation = f64::NEG_INFINITY;
    for round in 0..4 {
        let seeds = SeedTree::new(seed).child("round", round);
        train_cluster_round(&mut reg, &pool, &pool.ids(), &cfg, &mut opts, &seeds).unwrap();
        let cal = calibrate(&mut reg, &pool, &pool.ids(), &[1, 2, 3]).unwrap();
        for c in pool.ids() {
            let assigned = reg.cluster_of(c).unwrap();
            assert_eq!(cal.assigned[&c], assigned);
            let own = forecast_loss(reg.model(assigned).unwrap(), &pool.client(c).train, pool.shape).unwrap();
            assert_eq!(cal.losses[&c][&assigned], own);
            for id in 1..=3 {
                let other = forecast_loss(reg.model(id).unwrap(), &pool.client(c).train, pool.shape).unwrap();
                violation = violation.max(own - other);
            }
        }
    }
    violation
}

/// Purity by scanning the sample list once per (cluster, class) pair.
pub fn brute_purity(pairs: &[(ClusterId, ClassId)]) -> f64 {
    let clusters: BTreeSet<ClusterId> = pairs.iter().map(|p| p.0).collect();
    let classes: BTreeSet<ClassId> = pairs.iter().map(|p| p.1).collect();
    let mut hits = 0;
    for &k in &clusters {
        let mut best = 0;
        for &t in &classes {
            best = best.max(pairs.iter().filter(|&&(a, b)| a == k && b == t).count());
        }
        hits += best;
    }
    hits as f64 / pairs.len() as f64
}

/// Population variance as half the mean squared pairwise difference.
pub fn pairwise_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut s = 0.0;
    for a in xs {
        for b in xs {
            s += (a - b) * (a - b);
        }
    }
    s / (2.0 * n * n)
}

/// Registry with placeholder models for every cluster in `assignment`.
pub fn registry(assignment: &BTreeMap<usize, ClusterId>) -> ClusterRegistry {
    let arch = Arch::lstm_forecaster(1, 1, 1).unwrap();
    let models = assignment
        .values()
        .map(|&id| (id, ParamSet::zeros(arch.clone())))
        .collect();
    ClusterRegistry::new(assignment.clone(), models).unwrap()
}

/// Windows by walking the start index.
pub fn brute_windows(series: &[f64], window: usize, shift: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= series.len() {
        out.push(series[start..start + window].to_vec());
        start += shift;
    }
    out
}

/// Min-max image of `x` over `scope` found by sorting; constants map to 0.5.
pub fn brute_minmax(x: f64, scope: &[f64]) -> f64 {
    let mut sorted = scope.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.5
    }
}
