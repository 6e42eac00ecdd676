//! Federated orchestration: client sampling, weighted parameter averaging and
//! the federated clustering phase.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustergan::{self, GanLosses, GanOptimizers, GanTriple, LatentConfig};
use crate::data::{ClientId, ClientPool};
use crate::error::{Error, Result, ResultExt};
use crate::nn::{Activation, OptimizerConfig, ParamSet};
use crate::rng::SeedTree;
use crate::ClusterId;

/// `m = max(floor(|C| * ratio), 1)` clients drawn uniformly without
/// replacement, returned in ascending id order.
pub fn sample_clients<R: Rng + ?Sized>(ids: &[ClientId], ratio: f64, rng: &mut R) -> Vec<ClientId> {
    if ids.is_empty() {
        return Vec::new();
    }
    let m = ((ids.len() as f64 * ratio).floor() as usize).clamp(1, ids.len());
    let mut picked: Vec<ClientId> = if m == ids.len() {
        ids.to_vec()
    } else {
        index::sample(rng, ids.len(), m).into_iter().map(|i| ids[i]).collect()
    };
    picked.sort_unstable();
    picked
}

/// Elementwise mean of `params` weighted by `weights / sum(weights)`.
pub fn fedavg(params: &[&ParamSet], weights: &[f64]) -> Result<ParamSet> {
    let first = *params
        .first()
        .ok_or_else(|| Error::structural("fedavg needs at least one participant"))?;
    if params.len() != weights.len() {
        return Err(Error::structural(format!(
            "{} parameter sets but {} weights",
            params.len(),
            weights.len()
        )));
    }
    if let Some(bad) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::structural(format!("fedavg weight {bad} is not positive")));
    }
    if params.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::structural("fedavg participants differ in shape"));
    }
    if params.len() == 1 {
        return Ok(first.clone());
    }
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; first.len()];
    for (p, w) in params.iter().zip(weights) {
        let share = w / total;
        for (o, v) in out.iter_mut().zip(p.values()) {
            *o += share * v;
        }
    }
    // Rounding can push a coordinate a hair outside the participants' range.
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = params.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.values()[j]), hi.max(p.values()[j]))
        });
        *o = o.clamp(lo, hi);
    }
    ParamSet::new(first.arch().clone(), out)
}

/// Most frequent id; ties go to the smallest.
pub fn majority_cluster_id(ids: &[ClusterId]) -> Option<ClusterId> {
    let mut counts: BTreeMap<ClusterId, usize> = BTreeMap::new();
    for &id in ids {
        *counts.entry(id).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(id, _)| id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Config {
    pub latent: LatentConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub rounds: usize,
    /// Local GAN updates per client per round.
    pub local_steps: usize,
    pub ratio: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config {
            latent: LatentConfig::default(),
            hidden: vec![64, 64],
            activation: Activation::LeakyRelu,
            rounds: 50_000,
            local_steps: 1,
            ratio: 1.0,
            batch_size: 32,
            optimizer: OptimizerConfig {
                l2: 0.0,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl Phase1Config {
    pub fn validate(&self, field: &str) -> Result<()> {
        self.latent.validate(&format!("{field}.latent"))?;
        self.optimizer.validate(&format!("{field}.optimizer"))?;
        if self.hidden.contains(&0) {
            return Err(Error::config(format!("{field}.hidden"), "layer widths must be positive"));
        }
        if self.local_steps == 0 {
            return Err(Error::config(format!("{field}.local_steps"), "must be at least 1"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::config(format!("{field}.ratio"), "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{field}.batch_size"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result {
    pub triple: GanTriple,
    /// Majority id per client, in `1..=K`.
    pub assignments: BTreeMap<ClientId, ClusterId>,
    /// Inferred id of every sample in `Client::scored_samples` order.
    pub sample_ids: BTreeMap<ClientId, Vec<ClusterId>>,
    /// Participant-weighted losses per round.
    pub history: Vec<GanLosses>,
}

/// Federated ClusterGAN over `members`: each round samples clients, every
/// participant trains a copy of the broadcast triple on its clustering
/// samples, and the server averages all three models weighted by sample
/// count. Afterwards each client votes with the ids inferred for its samples.
///
/// Optimizer state lives on the client and persists across rounds; it never
/// leaves the client.
pub fn run_phase1(
    pool: &ClientPool,
    members: &[ClientId],
    cfg: &Phase1Config,
    seeds: &SeedTree,
) -> Result<Phase1Result> {
    cfg.validate("phase1")?;
    if members.is_empty() {
        return Err(Error::structural("clustering phase needs at least one client"));
    }
    let sample_len = pool
        .client(members[0])
        .cluster_samples
        .first()
        .map(|s| s.values.len())
        .ok_or_else(|| Error::structural(format!("client {} has no clustering samples", members[0])))?;
    for &c in members {
        let client = pool.client(c);
        if client.cluster_samples.is_empty() {
            return Err(Error::structural(format!("client {c} has no clustering samples")));
        }
        if client.cluster_samples.iter().any(|s| s.values.len() != sample_len) {
            return Err(Error::structural(format!(
                "client {c} holds samples whose length differs from {sample_len}"
            )));
        }
    }

    let mut triple = GanTriple::init(
        &cfg.latent,
        sample_len,
        &cfg.hidden,
        cfg.activation,
        &mut seeds.named("init").rng(),
    )?;
    let mut states: Vec<GanOptimizers> = members
        .iter()
        .map(|_| GanOptimizers::new(cfg.optimizer, &triple))
        .collect();
    let mut history = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let round_seeds = seeds.child("round", round as u64);
        let selected = sample_clients(members, cfg.ratio, &mut round_seeds.named("sample").rng());
        let broadcast = &triple;
        let updates: Vec<(GanTriple, f64, GanLosses)> = states
            .par_iter_mut()
            .zip(members.par_iter())
            .filter(|(_, c)| selected.binary_search(c).is_ok())
            .map(|(opts, &c)| {
                let data = &pool.client(c).cluster_samples;
                let mut rng = round_seeds.child("client", c as u64).rng();
                let mut local = broadcast.clone();
                let mut last = GanLosses::default();
                for _ in 0..cfg.local_steps {
                    last = clustergan::local_gan_step(
                        &mut local,
                        data,
                        &cfg.latent,
                        cfg.batch_size,
                        opts,
                        &mut rng,
                    )
                    .context_with(|| format!("client {c}, clustering round {round}"))?;
                }
                Ok((local, data.len() as f64, last))
            })
            .collect::<Result<_>>()?;

        let weights: Vec<f64> = updates.iter().map(|u| u.1).collect();
        let pick = |f: fn(&GanTriple) -> &ParamSet| -> Vec<&ParamSet> {
            updates.iter().map(|u| f(&u.0)).collect()
        };
        triple = GanTriple {
            generator: fedavg(&pick(|t| &t.generator), &weights)?,
            encoder: fedavg(&pick(|t| &t.encoder), &weights)?,
            discriminator: fedavg(&pick(|t| &t.discriminator), &weights)?,
        };
        let total: f64 = weights.iter().sum();
        let mut mean = GanLosses::default();
        for (_, w, l) in &updates {
            let s = w / total;
            mean.d_loss += s * l.d_loss;
            mean.g_e_loss += s * l.g_e_loss;
            mean.recon_n += s * l.recon_n;
            mean.recon_c += s * l.recon_c;
        }
        history.push(mean);
    }

    let votes: Vec<(ClientId, Vec<ClusterId>)> = members
        .par_iter()
        .map(|&c| {
            let ids = pool
                .client(c)
                .scored_samples()
                .map(|s| clustergan::infer_cluster(&triple.encoder, &s.values, &cfg.latent))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, ids))
        })
        .collect::<Result<_>>()?;
    let mut assignments = BTreeMap::new();
    let mut sample_ids = BTreeMap::new();
    for (c, ids) in votes {
        let cluster_votes = &ids[..pool.client(c).cluster_samples.len()];
        let id = majority_cluster_id(cluster_votes).expect("clients hold clustering samples");
        assignments.insert(c, id);
        sample_ids.insert(c, ids);
    }
    Ok(Phase1Result {
        triple,
        assignments,
        sample_ids,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Client, ForecastShape, TimeSeriesSample};
    use crate::nn::{Arch, Layer};

    fn p(values: &[f64]) -> ParamSet {
        let arch = Arch::new(vec![Layer::Dense {
            inputs: 1,
            outputs: values.len() / 2,
            activation: Activation::Linear,
        }])
        .unwrap();
        ParamSet::new(arch, values.to_vec()).unwrap()
    }

    #[test]
    fn sample_size_examples() {
        let mut rng = SeedTree::new(1).rng();
        let ids: Vec<usize> = (0..30).collect();
        assert_eq!(sample_clients(&ids, 0.1, &mut rng).len(), 3);
        assert_eq!(sample_clients(&ids[..5], 0.1, &mut rng).len(), 1);
        assert_eq!(sample_clients(&ids, 1.0, &mut rng), ids);
        let s = sample_clients(&ids, 0.5, &mut rng);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fedavg_examples() {
        let a = p(&[0.0, 0.0]);
        let b = p(&[4.0, 8.0]);
        assert_eq!(fedavg(&[&a, &b], &[1.0, 3.0]).unwrap().values(), &[3.0, 6.0]);
        assert_eq!(fedavg(&[&b, &b, &b], &[1.0, 2.0, 5.0]).unwrap(), b);
        assert_eq!(fedavg(&[&b], &[7.0]).unwrap(), b);
        assert!(fedavg(&[&a, &p(&[1.0, 2.0, 3.0, 4.0])], &[1.0, 1.0]).is_err());
        assert!(fedavg(&[&a, &b], &[1.0, 0.0]).is_err());
        assert!(fedavg(&[], &[]).is_err());
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_cluster_id(&[2, 2, 1]), Some(2));
        assert_eq!(majority_cluster_id(&[1, 2]), Some(1));
        assert_eq!(majority_cluster_id(&[3]), Some(3));
        assert_eq!(majority_cluster_id(&[1, 1, 2]), Some(1));
        assert_eq!(majority_cluster_id(&[]), None);
    }

    fn constant_pool(level: &[f64], per_client: usize, len: usize) -> ClientPool {
        let clients = level
            .iter()
            .enumerate()
            .map(|(id, &v)| {
                let s: Vec<TimeSeriesSample> = (0..per_client)
                    .map(|_| TimeSeriesSample::labeled(vec![v; len], id as u32 + 1))
                    .collect();
                Client {
                    id,
                    cluster_samples: s.clone(),
                    train: s,
                    overwrite: Vec::new(),
                    test: Vec::new(),
                }
            })
            .collect();
        ClientPool::new(clients, ForecastShape { input_len: len - 1, horizon: 1 }).unwrap()
    }

    fn tiny_cfg(rounds: usize) -> Phase1Config {
        Phase1Config {
            latent: LatentConfig {
                k: 2,
                noise_dim: 2,
                ..LatentConfig::default()
            },
            hidden: vec![8],
            rounds,
            batch_size: 4,
            ..Phase1Config::default()
        }
    }

    #[test]
    fn zero_rounds_still_assigns_every_client() {
        let pool = constant_pool(&[0.0, 1.0, 0.5], 3, 4);
        let r = run_phase1(&pool, &pool.ids(), &tiny_cfg(0), &SeedTree::new(3)).unwrap();
        assert_eq!(r.assignments.len(), 3);
        assert!(r.assignments.values().all(|id| (1..=2).contains(id)));
        assert!(r.history.is_empty());
    }

    #[test]
    fn phase1_is_reproducible() {
        let pool = constant_pool(&[0.0, 1.0], 3, 4);
        let a = run_phase1(&pool, &pool.ids(), &tiny_cfg(5), &SeedTree::new(4)).unwrap();
        let b = run_phase1(&pool, &pool.ids(), &tiny_cfg(5), &SeedTree::new(4)).unwrap();
        assert_eq!(a, b);
    }
}
