//! Top-down division driven by per-cluster loss statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClientId, ClientPool};
use crate::error::{Error, Result, ResultExt};
use crate::fedsim::{run_phase1, Phase1Config, Phase1Result};
use crate::hypcluster::{client_losses, evaluate, run_phase2, ClusterRegistry, OverwriteAt, Phase2Config, Phase2Outcome};
use crate::metrics::{MetricsRecord, Phase, RunLog};
use crate::rng::SeedTree;
use crate::ClusterId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStat {
    pub mean: f64,
    /// Population variance.
    pub var: f64,
    pub members: usize,
}

pub type ClusterLossStats = BTreeMap<ClusterId, ClusterStat>;

/// Mean and population variance of member losses, per cluster that has at
/// least one client in `losses`.
pub fn cluster_loss_stats(losses: &BTreeMap<ClientId, f64>, reg: &ClusterRegistry) -> Result<ClusterLossStats> {
    let mut groups: BTreeMap<ClusterId, Vec<f64>> = BTreeMap::new();
    for (&c, &l) in losses {
        let id = reg
            .cluster_of(c)
            .ok_or_else(|| Error::structural(format!("client {c} has no cluster")))?;
        groups.entry(id).or_default().push(l);
    }
    Ok(groups
        .into_iter()
        .map(|(id, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() == 1 {
                0.0
            } else {
                v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
            };
            (
                id,
                ClusterStat {
                    mean,
                    var,
                    members: v.len(),
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisiveConfig {
    pub max_rounds: usize,
    pub split_arity: usize,
    pub var_threshold: f64,
    pub mean_threshold: f64,
    /// Clustering rounds used when a selected cluster is split.
    pub split_rounds: usize,
    /// After a split, retrain and recalibrate every client against every
    /// cluster instead of only the split's clients and sub-clusters.
    pub global_recalibration: bool,
}

impl Default for DivisiveConfig {
    fn default() -> Self {
        DivisiveConfig {
            max_rounds: 2,
            split_arity: 2,
            var_threshold: 1e-6,
            mean_threshold: 1e-2,
            split_rounds: 25_000,
            global_recalibration: false,
        }
    }
}

impl DivisiveConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::config(format!("{field}.max_rounds"), "must be at least 1"));
        }
        if self.split_arity < 2 {
            return Err(Error::config(format!("{field}.split_arity"), "must be at least 2"));
        }
        for (name, v) in [
            ("var_threshold", self.var_threshold),
            ("mean_threshold", self.mean_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{field}.{name}"), "must be a non-negative number"));
            }
        }
        Ok(())
    }
}

/// Highest variance above the variance threshold, else highest mean above
/// the mean threshold, else nothing. Ties go to the smallest id.
pub fn select_cluster(stats: &ClusterLossStats, cfg: &DivisiveConfig) -> Option<ClusterId> {
    let pick = |key: fn(&ClusterStat) -> f64, threshold: f64| {
        stats
            .iter()
            .filter(|(_, s)| key(s) > threshold)
            .fold(None, |best: Option<(ClusterId, f64)>, (&id, s)| match best {
                Some((_, v)) if v >= key(s) => best,
                _ => Some((id, key(s))),
            })
            .map(|(id, _)| id)
    };
    pick(|s| s.var, cfg.var_threshold).or_else(|| pick(|s| s.mean, cfg.mean_threshold))
}

/// What happened in one divisive round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionStep {
    pub round: usize,
    /// Statistics the selection looked at (empty in round 1).
    pub stats: ClusterLossStats,
    pub selected: Option<ClusterId>,
    pub new_ids: Vec<ClusterId>,
    pub dropped: Vec<ClusterId>,
    pub assignment: BTreeMap<ClientId, ClusterId>,
    /// Weighted training-split loss at the end of the round.
    pub train_loss: f64,
    /// Weighted test-split loss at the end of the round.
    pub test_loss: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicOutcome {
    pub registry: ClusterRegistry,
    /// The clustering over all clients from round 1.
    pub initial_clustering: Phase1Result,
    pub steps: Vec<DivisionStep>,
    pub phase2: Vec<Phase2Outcome>,
}

pub struct DynamicSetup<'a> {
    pub phase1: &'a Phase1Config,
    pub phase2: &'a Phase2Config,
    pub divisive: &'a DivisiveConfig,
    /// Optional environment change during round 1's training phase.
    pub overwrite: Option<OverwriteAt>,
}

fn log_evaluation(log: &mut RunLog, round: usize, reg: &ClusterRegistry, pool: &ClientPool) -> Result<(f64, f64)> {
    let train = evaluate(reg, pool, |c| &c.train)?;
    let test = evaluate(reg, pool, |c| &c.test)?;
    log.record(
        MetricsRecord::new(round, Phase::Evaluation, 0)
            .with_losses(test.per_cluster, test.members)?
            .with_assignment(reg.assignment()),
    )?;
    Ok((train.weighted, test.weighted))
}

fn log_clustering(log: &mut RunLog, round: usize, result: &Phase1Result) -> Result<()> {
    for (t, l) in result.history.iter().enumerate() {
        let mut rec = MetricsRecord::new(round, Phase::Clustering, t + 1);
        rec.d_loss = Some(l.d_loss);
        rec.g_e_loss = Some(l.g_e_loss);
        log.record(rec)?;
    }
    Ok(())
}

/// Round 1 clusters and trains over every client; each later round splits
/// the cluster chosen by [`select_cluster`] until nothing qualifies or
/// `max_rounds` is reached.
pub fn run_dynamic_clustering(
    pool: &mut ClientPool,
    setup: &DynamicSetup<'_>,
    seeds: &SeedTree,
    log: &mut RunLog,
) -> Result<DynamicOutcome> {
    let DynamicSetup {
        phase1,
        phase2,
        divisive,
        overwrite,
    } = *setup;
    phase1.validate("phase1")?;
    phase2.validate("phase2")?;
    divisive.validate("divisive")?;
    let all = pool.ids();
    let arch = phase2.forecaster_arch(pool.shape)?;

    let round_seeds = seeds.child("divisive", 1);
    let initial = run_phase1(pool, &all, phase1, &round_seeds.named("clustering"))
        .context_with(|| "divisive round 1".to_string())?;
    log_clustering(log, 1, &initial)?;
    let k = phase1.latent.k as ClusterId;
    let mut reg = ClusterRegistry::with_fresh_models(
        initial.assignments.clone(),
        1..=k,
        &arch,
        &round_seeds.named("models"),
    )?;
    let ids = reg.ids();
    let first = run_phase2(
        &mut reg,
        pool,
        &all,
        &ids,
        phase2,
        &round_seeds.named("training"),
        overwrite,
        log,
        1,
    )
    .context_with(|| "divisive round 1".to_string())?;
    let (train_loss, test_loss) = log_evaluation(log, 1, &reg, pool)?;
    let mut steps = vec![DivisionStep {
        round: 1,
        stats: ClusterLossStats::new(),
        selected: None,
        new_ids: ids,
        dropped: Vec::new(),
        assignment: reg.assignment().clone(),
        train_loss,
        test_loss,
    }];
    let mut phase2_outcomes = vec![first];

    for round in 2..=divisive.max_rounds {
        let round_seeds = seeds.child("divisive", round as u64);
        let dropped = reg.compact();
        let losses = client_losses(&reg, pool, &all, |c| &c.train)?;
        let stats = cluster_loss_stats(&losses, &reg)?;
        log.record(
            MetricsRecord::new(round, Phase::Division, 0)
                .with_losses(
                    stats.iter().map(|(&id, s)| (id, s.mean)).collect(),
                    stats.iter().map(|(&id, s)| (id, s.members)).collect(),
                )?
                .with_assignment(reg.assignment()),
        )?;
        let selected = select_cluster(&stats, divisive);
        let Some(target) = selected else {
            let last = steps.last().expect("round 1 is recorded");
            let (train_loss, test_loss) = (last.train_loss, last.test_loss);
            steps.push(DivisionStep {
                round,
                stats,
                selected: None,
                new_ids: Vec::new(),
                dropped,
                assignment: reg.assignment().clone(),
                train_loss,
                test_loss,
            });
            break;
        };

        let members = reg.members(target);
        let split_cfg = Phase1Config {
            latent: crate::clustergan::LatentConfig {
                k: divisive.split_arity,
                ..phase1.latent
            },
            rounds: divisive.split_rounds,
            ..phase1.clone()
        };
        let split = run_phase1(pool, &members, &split_cfg, &round_seeds.named("clustering"))
            .context_with(|| format!("divisive round {round}, splitting cluster {target}"))?;
        log_clustering(log, round, &split)?;
        let new_ids: Vec<ClusterId> = (0..divisive.split_arity).map(|_| reg.allocate_id()).collect();
        let model_seeds = round_seeds.named("models");
        for &id in &new_ids {
            reg.insert_model(
                id,
                crate::nn::ParamSet::init(arch.clone(), &mut model_seeds.child("model", id as u64).rng()),
            );
        }
        for (&c, &local) in &split.assignments {
            reg.assign(c, new_ids[local as usize - 1])?;
        }
        reg.retire(target)?;

        let (scope, candidates) = if divisive.global_recalibration {
            (all.clone(), reg.ids())
        } else {
            (members, new_ids.clone())
        };
        let outcome = run_phase2(
            &mut reg,
            pool,
            &scope,
            &candidates,
            phase2,
            &round_seeds.named("training"),
            None,
            log,
            round,
        )
        .context_with(|| format!("divisive round {round}"))?;
        phase2_outcomes.push(outcome);
        let (train_loss, test_loss) = log_evaluation(log, round, &reg, pool)?;
        steps.push(DivisionStep {
            round,
            stats,
            selected,
            new_ids,
            dropped,
            assignment: reg.assignment().clone(),
            train_loss,
            test_loss,
        });
    }
    reg.compact();
    Ok(DynamicOutcome {
        registry: reg,
        initial_clustering: initial,
        steps,
        phase2: phase2_outcomes,
    })
}
