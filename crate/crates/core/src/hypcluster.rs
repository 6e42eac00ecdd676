//! Per-cluster forecaster training with HypCluster calibration.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientId, ClientPool, ForecastShape, OverwriteEvent, TimeSeriesSample};
use crate::error::{Error, Result, ResultExt};
use crate::fedsim::{fedavg, sample_clients};
use crate::metrics::{MetricsRecord, Phase, RunLog};
use crate::nn::{self, mse_grad, mse_loss, Arch, Gradients, OptimizerConfig, OptimizerState, ParamSet};
use crate::rng::SeedTree;
use crate::ClusterId;

/// Client to cluster map plus one forecaster per cluster id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRegistry {
    assignment: BTreeMap<ClientId, ClusterId>,
    models: BTreeMap<ClusterId, ParamSet>,
    next_id: ClusterId,
}

impl ClusterRegistry {
    pub fn new(
        assignment: BTreeMap<ClientId, ClusterId>,
        models: BTreeMap<ClusterId, ParamSet>,
    ) -> Result<Self> {
        if let Some((c, id)) = assignment.iter().find(|(_, id)| !models.contains_key(id)) {
            return Err(Error::structural(format!(
                "client {c} is assigned to cluster {id}, which has no model"
            )));
        }
        if models.contains_key(&0) {
            return Err(Error::structural("cluster ids start at 1"));
        }
        let next_id = models.keys().next_back().map_or(1, |id| id + 1);
        Ok(ClusterRegistry {
            assignment,
            models,
            next_id,
        })
    }

    /// Registry whose clusters `ids` each get an independently initialized
    /// forecaster.
    pub fn with_fresh_models(
        assignment: BTreeMap<ClientId, ClusterId>,
        ids: impl IntoIterator<Item = ClusterId>,
        arch: &Arch,
        seeds: &SeedTree,
    ) -> Result<Self> {
        let models = ids
            .into_iter()
            .map(|id| (id, ParamSet::init(arch.clone(), &mut seeds.child("model", id as u64).rng())))
            .collect();
        ClusterRegistry::new(assignment, models)
    }

    pub fn assignment(&self) -> &BTreeMap<ClientId, ClusterId> {
        &self.assignment
    }

    pub fn models(&self) -> &BTreeMap<ClusterId, ParamSet> {
        &self.models
    }

    pub fn model(&self, id: ClusterId) -> Option<&ParamSet> {
        self.models.get(&id)
    }

    pub fn cluster_of(&self, client: ClientId) -> Option<ClusterId> {
        self.assignment.get(&client).copied()
    }

    /// Number of live clusters (clusters holding a model).
    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn ids(&self) -> Vec<ClusterId> {
        self.models.keys().copied().collect()
    }

    pub fn members(&self, id: ClusterId) -> Vec<ClientId> {
        self.assignment
            .iter()
            .filter(|&(_, &a)| a == id)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Member count of every live cluster, zero for empty ones.
    pub fn member_counts(&self) -> BTreeMap<ClusterId, usize> {
        let mut counts: BTreeMap<ClusterId, usize> = self.models.keys().map(|&id| (id, 0)).collect();
        for id in self.assignment.values() {
            *counts.entry(*id).or_default() += 1;
        }
        counts
    }

    /// Next never-used id. Ids are not recycled.
    pub fn allocate_id(&mut self) -> ClusterId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn insert_model(&mut self, id: ClusterId, model: ParamSet) {
        self.next_id = self.next_id.max(id + 1);
        self.models.insert(id, model);
    }

    pub fn assign(&mut self, client: ClientId, id: ClusterId) -> Result<()> {
        if !self.models.contains_key(&id) {
            return Err(Error::structural(format!("cluster {id} has no model")));
        }
        self.assignment.insert(client, id);
        Ok(())
    }

    /// Drops the model of a cluster that no client references any more.
    pub fn retire(&mut self, id: ClusterId) -> Result<ParamSet> {
        if self.assignment.values().any(|&a| a == id) {
            return Err(Error::structural(format!("cluster {id} still has members")));
        }
        self.models
            .remove(&id)
            .ok_or_else(|| Error::structural(format!("cluster {id} does not exist")))
    }

    /// Removes every cluster without members and returns their ids.
    pub fn compact(&mut self) -> Vec<ClusterId> {
        let empty: Vec<ClusterId> = self
            .member_counts()
            .into_iter()
            .filter(|&(_, n)| n == 0)
            .map(|(id, _)| id)
            .collect();
        for id in &empty {
            self.models.remove(id);
        }
        empty
    }
}

/// Mean squared forecast error over `samples`.
pub fn forecast_loss(model: &ParamSet, samples: &[TimeSeriesSample], shape: ForecastShape) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::structural("loss over an empty sample set"));
    }
    let mut total = 0.0;
    for s in samples {
        let (input, target) = shape.split(s);
        total += mse_loss(&nn::forward(model, input)?, target)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss over the batch and its gradient.
pub fn batch_gradients(
    model: &ParamSet,
    batch: &[&TimeSeriesSample],
    shape: ForecastShape,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::structural("empty batch"));
    }
    let m = batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for s in batch {
        let (input, target) = shape.split(s);
        let (pred, trace) = nn::forward_trace(model, input)?;
        loss += mse_loss(&pred, target)? / m;
        let upstream: Vec<f64> = mse_grad(&pred, target).into_iter().map(|g| g / m).collect();
        nn::backward_trace(model, &trace, &upstream, &mut grads)?;
    }
    Ok((loss, grads))
}

/// `steps` minibatch updates on `samples`; returns the mean batch loss.
pub fn local_train<R: Rng + ?Sized>(
    model: &mut ParamSet,
    samples: &[TimeSeriesSample],
    shape: ForecastShape,
    steps: usize,
    batch_size: usize,
    opt: &mut OptimizerState,
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::structural("local training needs data"));
    }
    let m = batch_size.clamp(1, samples.len());
    let mut mean = 0.0;
    for _ in 0..steps {
        let mut picked: Vec<usize> = index::sample(rng, samples.len(), m).into_iter().collect();
        picked.sort_unstable();
        let batch: Vec<&TimeSeriesSample> = picked.iter().map(|&i| &samples[i]).collect();
        let (loss, grads) = batch_gradients(model, &batch, shape)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                index: 0,
                message: "forecast loss is not finite".into(),
            });
        }
        opt.step(model, &grads)?;
        mean += loss / steps as f64;
    }
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Config {
    pub hyp_rounds: usize,
    pub train_rounds: usize,
    pub local_steps: usize,
    pub ratio: f64,
    pub batch_size: usize,
    pub lstm_units: usize,
    /// Training-round indices (1-based, within each outer round) after which
    /// calibration runs.
    pub calibration_rounds: BTreeSet<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config {
            hyp_rounds: 1,
            train_rounds: 100,
            local_steps: 2,
            ratio: 1.0,
            batch_size: 7,
            lstm_units: 8,
            calibration_rounds: [40, 80].into(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl Phase2Config {
    pub fn validate(&self, field: &str) -> Result<()> {
        self.optimizer.validate(&format!("{field}.optimizer"))?;
        for (name, v) in [
            ("hyp_rounds", self.hyp_rounds),
            ("train_rounds", self.train_rounds),
            ("local_steps", self.local_steps),
            ("batch_size", self.batch_size),
            ("lstm_units", self.lstm_units),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{field}.{name}"), "must be at least 1"));
            }
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::config(format!("{field}.ratio"), "must lie in (0, 1]"));
        }
        if let Some(bad) = self
            .calibration_rounds
            .iter()
            .find(|&&r| r == 0 || r > self.train_rounds)
        {
            return Err(Error::config(
                format!("{field}.calibration_rounds"),
                format!("round {bad} is outside 1..={}", self.train_rounds),
            ));
        }
        Ok(())
    }

    pub fn forecaster_arch(&self, shape: ForecastShape) -> Result<Arch> {
        Arch::lstm_forecaster(shape.input_len, self.lstm_units, shape.horizon)
    }
}

/// Per-client optimizer state, reset whenever the client's cluster changes.
#[derive(Debug, Clone, Default)]
pub struct ClientOptimizers {
    states: BTreeMap<ClientId, (ClusterId, OptimizerState)>,
}

impl ClientOptimizers {
    fn take(&mut self, client: ClientId, cluster: ClusterId, cfg: OptimizerConfig, len: usize) -> OptimizerState {
        match self.states.remove(&client) {
            Some((id, state)) if id == cluster => state,
            _ => OptimizerState::new(cfg, len),
        }
    }
}

/// Losses observed by participants during one training round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundLosses {
    pub per_cluster: BTreeMap<ClusterId, f64>,
    pub participants: BTreeMap<ClusterId, usize>,
}

/// Sampled clients train their own cluster's model; each cluster's model is
/// replaced by the sample-count-weighted mean of its participants' copies.
/// Clusters without participants are left untouched.
pub fn train_cluster_round(
    reg: &mut ClusterRegistry,
    pool: &ClientPool,
    participants: &[ClientId],
    cfg: &Phase2Config,
    optimizers: &mut ClientOptimizers,
    seeds: &SeedTree,
) -> Result<RoundLosses> {
    let mut jobs = Vec::with_capacity(participants.len());
    for &c in participants {
        let id = reg
            .cluster_of(c)
            .ok_or_else(|| Error::structural(format!("client {c} has no cluster")))?;
        let model = reg
            .model(id)
            .ok_or_else(|| Error::structural(format!("cluster {id} has no model")))?;
        let opt = optimizers.take(c, id, cfg.optimizer, model.len());
        jobs.push((c, id, model.clone(), opt));
    }
    let shape = pool.shape;
    let trained: Vec<(ClientId, ClusterId, ParamSet, OptimizerState, f64)> = jobs
        .into_par_iter()
        .map(|(c, id, mut model, mut opt)| {
            let mut rng = seeds.child("client", c as u64).rng();
            let loss = local_train(
                &mut model,
                &pool.client(c).train,
                shape,
                cfg.local_steps,
                cfg.batch_size,
                &mut opt,
                &mut rng,
            )
            .context_with(|| format!("client {c} in cluster {id}"))?;
            Ok((c, id, model, opt, loss))
        })
        .collect::<Result<_>>()?;

    let mut by_cluster: BTreeMap<ClusterId, Vec<(&ParamSet, f64, f64)>> = BTreeMap::new();
    for (c, id, model, _, loss) in &trained {
        by_cluster
            .entry(*id)
            .or_default()
            .push((model, pool.client(*c).n_train() as f64, *loss));
    }
    let mut out = RoundLosses::default();
    let mut updated = BTreeMap::new();
    for (id, parts) in &by_cluster {
        let params: Vec<&ParamSet> = parts.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = parts.iter().map(|p| p.1).collect();
        updated.insert(*id, fedavg(&params, &weights).context_with(|| format!("cluster {id}"))?);
        let total: f64 = weights.iter().sum();
        out.per_cluster
            .insert(*id, parts.iter().map(|p| p.1 / total * p.2).sum());
        out.participants.insert(*id, parts.len());
    }
    for (id, model) in updated {
        reg.insert_model(id, model);
    }
    for (c, id, _, opt, _) in trained {
        optimizers.states.insert(c, (id, opt));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Loss of every candidate model on every calibrated client.
    pub losses: BTreeMap<ClientId, BTreeMap<ClusterId, f64>>,
    /// `(client, from, to)` for each client that changed cluster.
    pub moves: Vec<(ClientId, ClusterId, ClusterId)>,
    /// Cluster of every calibrated client afterwards.
    pub assigned: BTreeMap<ClientId, ClusterId>,
}

/// Reassigns each of `clients` to the candidate cluster whose model has the
/// lowest loss on the client's training split. A tie keeps the incumbent when
/// it is among the tied, otherwise picks the smallest id.
pub fn calibrate(
    reg: &mut ClusterRegistry,
    pool: &ClientPool,
    clients: &[ClientId],
    candidates: &[ClusterId],
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::structural("calibration needs at least one candidate cluster"));
    }
    let models: Vec<(ClusterId, &ParamSet)> = candidates
        .iter()
        .map(|&id| {
            reg.model(id)
                .map(|m| (id, m))
                .ok_or_else(|| Error::structural(format!("cluster {id} has no model")))
        })
        .collect::<Result<_>>()?;
    let shape = pool.shape;
    let losses: Vec<(ClientId, BTreeMap<ClusterId, f64>)> = clients
        .par_iter()
        .map(|&c| {
            let data = &pool.client(c).train;
            let per = models
                .iter()
                .map(|&(id, m)| Ok((id, forecast_loss(m, data, shape)?)))
                .collect::<Result<_>>()
                .context_with(|| format!("calibrating client {c}"))?;
            Ok((c, per))
        })
        .collect::<Result<_>>()?;

    let mut moves = Vec::new();
    let mut assigned = BTreeMap::new();
    for (c, per) in &losses {
        let best = per.values().copied().fold(f64::INFINITY, f64::min);
        let current = reg.cluster_of(*c);
        let chosen = match current {
            Some(cur) if per.get(&cur) == Some(&best) => cur,
            _ => *per.iter().find(|&(_, &l)| l == best).map(|(id, _)| id).ok_or_else(|| {
                Error::Numeric {
                    index: *c,
                    message: "no finite calibration loss".into(),
                }
            })?,
        };
        if current != Some(chosen) {
            if let Some(from) = current {
                moves.push((*c, from, chosen));
            }
            reg.assign(*c, chosen)?;
        }
        assigned.insert(*c, chosen);
    }
    debug_assert!(losses.iter().all(|(c, per)| {
        let own = reg.cluster_of(*c).and_then(|id| per.get(&id)).copied();
        own.is_some_and(|own| per.values().all(|&l| l >= own))
    }));
    Ok(Calibration {
        losses: losses.into_iter().collect(),
        moves,
        assigned,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phase2Outcome {
    /// Local optimizer steps taken by each client.
    pub local_steps: BTreeMap<ClientId, usize>,
    /// Each calibration with the global round it followed.
    pub calibrations: Vec<(usize, Calibration)>,
    pub overwrite: Option<OverwriteEvent>,
}

/// Where the optional environment change is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverwriteAt {
    /// Global training round before which the event fires.
    pub round: usize,
}

/// Outer rounds of per-cluster training, calibrating `scope` against
/// `candidates` after each scheduled training round.
#[allow(clippy::too_many_arguments)]
pub fn run_phase2(
    reg: &mut ClusterRegistry,
    pool: &mut ClientPool,
    scope: &[ClientId],
    candidates: &[ClusterId],
    cfg: &Phase2Config,
    seeds: &SeedTree,
    overwrite: Option<OverwriteAt>,
    log: &mut RunLog,
    divisive_round: usize,
) -> Result<Phase2Outcome> {
    cfg.validate("phase2")?;
    if scope.is_empty() {
        return Err(Error::structural("training phase needs at least one client"));
    }
    let mut outcome = Phase2Outcome::default();
    let mut optimizers = ClientOptimizers::default();
    for outer in 0..cfg.hyp_rounds {
        for t in 1..=cfg.train_rounds {
            let round = outer * cfg.train_rounds + t;
            if overwrite.is_some_and(|o| o.round == round) {
                let mut rng = seeds.named("overwrite").rng();
                outcome.overwrite = Some(pool.apply_overwrite_event(&mut rng, Some(round))?);
            }
            let round_seeds = seeds.child("round", round as u64);
            let participants = sample_clients(scope, cfg.ratio, &mut round_seeds.named("sample").rng());
            let losses = train_cluster_round(reg, pool, &participants, cfg, &mut optimizers, &round_seeds)
                .context_with(|| format!("training round {round}"))?;
            for &c in &participants {
                *outcome.local_steps.entry(c).or_default() += cfg.local_steps;
            }
            log.record(
                MetricsRecord::new(divisive_round, Phase::Training, round)
                    .with_losses(losses.per_cluster, losses.participants)?
                    .with_assignment(reg.assignment()),
            )?;
            if cfg.calibration_rounds.contains(&t) {
                let cal = calibrate(reg, pool, scope, candidates)
                    .context_with(|| format!("calibration after round {round}"))?;
                let mut per_cluster: BTreeMap<ClusterId, (f64, usize)> = BTreeMap::new();
                for (c, per) in &cal.losses {
                    let id = cal.assigned[c];
                    let e = per_cluster.entry(id).or_default();
                    e.0 += per[&id];
                    e.1 += 1;
                }
                log.record(
                    MetricsRecord::new(divisive_round, Phase::Calibration, round)
                        .with_losses(
                            per_cluster.iter().map(|(&id, &(s, n))| (id, s / n as f64)).collect(),
                            per_cluster.iter().map(|(&id, &(_, n))| (id, n)).collect(),
                        )?
                        .with_assignment(reg.assignment()),
                )?;
                outcome.calibrations.push((round, cal));
            }
        }
    }
    Ok(outcome)
}

/// Each client's loss on `split(client)` under its own cluster's model.
pub fn client_losses<'a, F>(
    reg: &ClusterRegistry,
    pool: &'a ClientPool,
    clients: &[ClientId],
    split: F,
) -> Result<BTreeMap<ClientId, f64>>
where
    F: Fn(&'a crate::data::Client) -> &'a [TimeSeriesSample] + Sync,
{
    clients
        .par_iter()
        .map(|&c| {
            let id = reg
                .cluster_of(c)
                .ok_or_else(|| Error::structural(format!("client {c} has no cluster")))?;
            let model = reg
                .model(id)
                .ok_or_else(|| Error::structural(format!("cluster {id} has no model")))?;
            Ok((c, forecast_loss(model, split(pool.client(c)), pool.shape)?))
        })
        .collect()
}

/// Client losses on one split under their own cluster models, summarized per
/// cluster. Clients whose split is empty are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_client: BTreeMap<ClientId, f64>,
    /// Mean over member clients.
    pub per_cluster: BTreeMap<ClusterId, f64>,
    pub members: BTreeMap<ClusterId, usize>,
    /// Membership-weighted mean of `per_cluster`.
    pub weighted: f64,
}

pub fn evaluate<'a, F>(reg: &ClusterRegistry, pool: &'a ClientPool, split: F) -> Result<Evaluation>
where
    F: Fn(&'a crate::data::Client) -> &'a [TimeSeriesSample] + Sync,
{
    let clients: Vec<ClientId> = reg
        .assignment()
        .keys()
        .copied()
        .filter(|&c| !split(pool.client(c)).is_empty())
        .collect();
    if clients.is_empty() {
        return Err(Error::structural("no client holds samples in the evaluated split"));
    }
    let per_client = client_losses(reg, pool, &clients, &split)?;
    let mut sums: BTreeMap<ClusterId, (f64, usize)> = BTreeMap::new();
    for (c, l) in &per_client {
        let e = sums.entry(reg.cluster_of(*c).expect("evaluated clients are assigned")).or_default();
        e.0 += l;
        e.1 += 1;
    }
    let per_cluster: BTreeMap<ClusterId, f64> = sums.iter().map(|(&id, &(s, n))| (id, s / n as f64)).collect();
    let members: BTreeMap<ClusterId, usize> = sums.iter().map(|(&id, &(_, n))| (id, n)).collect();
    let weighted = crate::metrics::weighted_forecast_loss(&per_cluster, &members)?;
    Ok(Evaluation {
        per_client,
        per_cluster,
        members,
        weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Client;

    fn shape() -> ForecastShape {
        ForecastShape {
            input_len: 3,
            horizon: 1,
        }
    }

    fn pool(levels: &[f64]) -> ClientPool {
        let clients = levels
            .iter()
            .enumerate()
            .map(|(id, &v)| {
                let s: Vec<TimeSeriesSample> = (0..4)
                    .map(|j| TimeSeriesSample::labeled(vec![v, v, v, v + 0.01 * j as f64], 1))
                    .collect();
                Client {
                    id,
                    cluster_samples: s.clone(),
                    train: s.clone(),
                    overwrite: s.clone(),
                    test: s,
                }
            })
            .collect();
        ClientPool::new(clients, shape()).unwrap()
    }

    fn registry(assignment: &[(ClientId, ClusterId)], ids: &[ClusterId]) -> ClusterRegistry {
        let arch = Arch::lstm_forecaster(3, 2, 1).unwrap();
        ClusterRegistry::with_fresh_models(
            assignment.iter().copied().collect(),
            ids.iter().copied(),
            &arch,
            &SeedTree::new(11),
        )
        .unwrap()
    }

    #[test]
    fn registry_bookkeeping() {
        let mut reg = registry(&[(0, 1), (1, 1), (2, 2)], &[1, 2, 3]);
        assert_eq!(reg.k(), 3);
        assert_eq!(reg.members(1), vec![0, 1]);
        assert_eq!(reg.member_counts(), [(1, 2), (2, 1), (3, 0)].into());
        assert_eq!(reg.allocate_id(), 4);
        assert_eq!(reg.compact(), vec![3]);
        assert_eq!(reg.allocate_id(), 5);
        assert!(reg.retire(1).is_err());
        assert!(reg.assign(0, 9).is_err());
        let arch = Arch::lstm_forecaster(3, 2, 1).unwrap();
        assert!(ClusterRegistry::new([(0, 7)].into(), [(1, ParamSet::zeros(arch))].into()).is_err());
    }

    #[test]
    fn single_cluster_calibration_changes_nothing() {
        let p = pool(&[0.1, 0.9]);
        let mut reg = registry(&[(0, 1), (1, 1)], &[1]);
        let before = reg.clone();
        let cal = calibrate(&mut reg, &p, &[0, 1], &[1]).unwrap();
        assert!(cal.moves.is_empty());
        assert_eq!(reg, before);
    }

    #[test]
    fn calibration_moves_to_lower_loss_and_is_idempotent() {
        let p = pool(&[0.1, 0.9, 0.5]);
        let mut reg = registry(&[(0, 1), (1, 1), (2, 2)], &[1, 2]);
        let cal = calibrate(&mut reg, &p, &[0, 1, 2], &[1, 2]).unwrap();
        for (c, per) in &cal.losses {
            let mine = per[&reg.cluster_of(*c).unwrap()];
            assert!(per.values().all(|&l| mine <= l + 1e-12));
        }
        let snapshot = reg.clone();
        let again = calibrate(&mut reg, &p, &[0, 1, 2], &[1, 2]).unwrap();
        assert!(again.moves.is_empty());
        assert_eq!(reg, snapshot);
    }

    #[test]
    fn tie_keeps_incumbent_else_smallest() {
        let p = pool(&[0.4]);
        let arch = Arch::lstm_forecaster(3, 2, 1).unwrap();
        let m = ParamSet::init(arch, &mut SeedTree::new(1).rng());
        let models: BTreeMap<ClusterId, ParamSet> = [(1, m.clone()), (2, m.clone()), (3, m)].into();
        let mut reg = ClusterRegistry::new([(0, 2)].into(), models.clone()).unwrap();
        calibrate(&mut reg, &p, &[0], &[1, 2, 3]).unwrap();
        assert_eq!(reg.cluster_of(0), Some(2));
        calibrate(&mut reg, &p, &[0], &[1, 3]).unwrap();
        assert_eq!(reg.cluster_of(0), Some(1));
    }

    #[test]
    fn cluster_without_participants_is_untouched() {
        let p = pool(&[0.1, 0.9]);
        let mut reg = registry(&[(0, 1), (1, 2)], &[1, 2]);
        let before = reg.model(2).unwrap().clone();
        let cfg = Phase2Config::default();
        let mut opts = ClientOptimizers::default();
        let losses = train_cluster_round(&mut reg, &p, &[0], &cfg, &mut opts, &SeedTree::new(2)).unwrap();
        assert_eq!(reg.model(2).unwrap(), &before);
        assert_ne!(reg.model(1).unwrap(), registry(&[], &[1]).model(1).unwrap());
        assert_eq!(losses.participants, [(1, 1)].into());
    }

    #[test]
    fn zero_learning_rate_leaves_models() {
        let mut p = pool(&[0.1, 0.9]);
        let mut reg = registry(&[(0, 1), (1, 2)], &[1, 2]);
        let before = reg.models().clone();
        let cfg = Phase2Config {
            train_rounds: 3,
            calibration_rounds: BTreeSet::new(),
            optimizer: OptimizerConfig {
                learning_rate: 0.0,
                ..OptimizerConfig::default()
            },
            ..Phase2Config::default()
        };
        let mut log = RunLog::new();
        run_phase2(&mut reg, &mut p, &[0, 1], &[1, 2], &cfg, &SeedTree::new(3), None, &mut log, 1)
            .unwrap();
        assert_eq!(reg.models(), &before);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn default_schedule_counts() {
        let mut p = pool(&[0.1, 0.9, 0.3]);
        let mut reg = registry(&[(0, 1), (1, 2), (2, 1)], &[1, 2]);
        let cfg = Phase2Config::default();
        let mut log = RunLog::new();
        let out = run_phase2(&mut reg, &mut p, &[0, 1, 2], &[1, 2], &cfg, &SeedTree::new(4), None, &mut log, 1)
            .unwrap();
        assert!(out.local_steps.values().all(|&n| n == 200));
        assert_eq!(out.calibrations.len(), 2);
    }

    #[test]
    fn empty_calibration_schedule_freezes_assignment() {
        let mut p = pool(&[0.1, 0.9, 0.3]);
        let mut reg = registry(&[(0, 1), (1, 1), (2, 2)], &[1, 2]);
        let before = reg.assignment().clone();
        let cfg = Phase2Config {
            train_rounds: 5,
            calibration_rounds: BTreeSet::new(),
            ..Phase2Config::default()
        };
        let mut log = RunLog::new();
        run_phase2(&mut reg, &mut p, &[0, 1, 2], &[1, 2], &cfg, &SeedTree::new(5), None, &mut log, 1)
            .unwrap();
        assert_eq!(reg.assignment(), &before);
    }

    #[test]
    fn validation_names_fields() {
        let cfg = Phase2Config {
            calibration_rounds: [0].into(),
            ..Phase2Config::default()
        };
        let err = cfg.validate("phase2").unwrap_err().to_string();
        assert!(err.contains("phase2.calibration_rounds"), "{err}");
    }
}
