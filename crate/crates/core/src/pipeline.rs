//! End-to-end runs: build the client pool from config, run the dynamic or
//! baseline pipeline, and write artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{agglomerative_cluster, extract_features, standardize, FeatureVector};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    self, long_series_pool, partition_non_iid, ClassId, ClientId, ClientPool, ForecastShape,
    OverwriteEvent, TimeSeriesSample,
};
use crate::divisive::{run_dynamic_clustering, DivisionStep, DynamicSetup};
use crate::error::{Error, Result};
use crate::fedsim::majority_cluster_id;
use crate::hypcluster::{evaluate, run_phase2, ClusterRegistry, OverwriteAt, Phase2Config};
use crate::metrics::{purity, purity_of_pairs, RunLog};
use crate::rng::SeedTree;
use crate::ClusterId;

/// Builds the client pool the config describes.
pub fn build_pool(cfg: &ExperimentConfig) -> Result<ClientPool> {
    let d = &cfg.dataset;
    let seeds = SeedTree::new(cfg.seed).named("data");
    let (mut samples, truth): (Vec<TimeSeriesSample>, Option<Vec<ClassId>>) = match d.source {
        DataSource::Toy => (data::toy_sinusoids(&d.toy, &mut seeds.rng())?, None),
        DataSource::Handover => {
            let h = data::synth_handover(&d.handover, &mut seeds.rng())?;
            (h.series, Some(h.archetypes))
        }
        DataSource::File => {
            let path = d.path.as_ref().expect("validated");
            let samples = data::load_dataset(path, d.format)?;
            let truth = d.labels.as_ref().map(data::load_labels).transpose()?;
            (samples, truth)
        }
    };
    data::normalize(&mut samples, d.normalization())?;
    if d.is_long() {
        long_series_pool(&samples, d.long_series, truth.as_deref())
    } else {
        if let Some(t) = truth {
            if t.len() != samples.len() {
                return Err(Error::structural(format!(
                    "{} labels in the sidecar for {} series",
                    t.len(),
                    samples.len()
                )));
            }
            for (s, l) in samples.iter_mut().zip(t) {
                s.label = Some(l);
            }
        }
        let len = samples[0].values.len();
        let shape = ForecastShape::from_fraction(len, d.forecast_input_fraction)?;
        partition_non_iid(&samples, d.n_clients, d.split, shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Dynamic,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub members: Vec<ClientId>,
    pub test_loss: f64,
}

/// Final result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: RunKind,
    pub seed: u64,
    pub final_k: usize,
    pub clusters: BTreeMap<ClusterId, ClusterSummary>,
    pub assignment: BTreeMap<ClientId, ClusterId>,
    /// Sample-level purity of the initial clustering.
    pub clustering_purity: Option<f64>,
    /// Client-level purity of the initial clustering.
    pub clustering_client_purity: Option<f64>,
    /// Client-level purity of the final assignment.
    pub final_client_purity: Option<f64>,
    /// Membership-weighted test-split MSE.
    pub test_mse: f64,
    /// Membership-weighted training-split MSE.
    pub train_mse: f64,
    pub per_client_test_mse: BTreeMap<ClientId, f64>,
    pub divisive_rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overwrite: Option<OverwriteEvent>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub log: RunLog,
    pub history: Vec<DivisionStep>,
}

/// `(cluster, class)` for every sample a client holds, with the class from
/// sample labels or, failing that, the client's ground truth.
fn sample_pairs<F>(pool: &ClientPool, cluster_of_sample: F) -> Option<Vec<(ClusterId, ClassId)>>
where
    F: Fn(ClientId, usize) -> ClusterId,
{
    let truth = pool.client_truth();
    let mut pairs = Vec::new();
    for c in pool.clients() {
        for (i, s) in c.scored_samples().enumerate() {
            let class = s.label.or_else(|| truth.get(&c.id).copied())?;
            pairs.push((cluster_of_sample(c.id, i), class));
        }
    }
    Some(pairs)
}

fn client_purity(pool: &ClientPool, assignment: &BTreeMap<ClientId, ClusterId>) -> Result<Option<f64>> {
    let truth = pool.client_truth();
    if truth.len() != pool.len() {
        return Ok(None);
    }
    purity(assignment, &truth).map(Some)
}

fn finish(
    kind: RunKind,
    cfg: &ExperimentConfig,
    reg: &ClusterRegistry,
    pool: &ClientPool,
    clustering_purity: Option<f64>,
    clustering_client_purity: Option<f64>,
    divisive_rounds: usize,
) -> Result<Summary> {
    let test = evaluate(reg, pool, |c| &c.test)?;
    let train = evaluate(reg, pool, |c| &c.train)?;
    let clusters = reg
        .ids()
        .into_iter()
        .map(|id| {
            (
                id,
                ClusterSummary {
                    members: reg.members(id),
                    test_loss: test.per_cluster.get(&id).copied().unwrap_or(f64::NAN),
                },
            )
        })
        .collect();
    Ok(Summary {
        kind,
        seed: cfg.seed,
        final_k: reg.k(),
        clusters,
        assignment: reg.assignment().clone(),
        clustering_purity,
        clustering_client_purity,
        final_client_purity: client_purity(pool, reg.assignment())?,
        test_mse: test.weighted,
        train_mse: train.weighted,
        per_client_test_mse: test.per_client,
        divisive_rounds,
        overwrite: pool.events.last().cloned(),
    })
}

/// Three-phase dynamic clustering.
pub fn run_dynamic(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut pool = build_pool(cfg)?;
    // the clustering is scored against the data it saw, before any overwrite
    let clustered = pool.clone();
    let seeds = SeedTree::new(cfg.seed).named("dynamic");
    let mut log = RunLog::new();
    let setup = DynamicSetup {
        phase1: &cfg.clustering,
        phase2: &cfg.training,
        divisive: &cfg.divisive,
        overwrite: cfg.overwrite.map(|o| OverwriteAt { round: o.round }),
    };
    let outcome = run_dynamic_clustering(&mut pool, &setup, &seeds, &mut log)?;
    let initial = &outcome.initial_clustering;
    let clustering_purity = sample_pairs(&clustered, |c, i| initial.sample_ids[&c][i])
        .map(purity_of_pairs)
        .transpose()?;
    let clustering_client_purity = client_purity(&clustered, &initial.assignments)?;
    let summary = finish(
        RunKind::Dynamic,
        cfg,
        &outcome.registry,
        &pool,
        clustering_purity,
        clustering_client_purity,
        outcome.steps.len(),
    )?;
    Ok(RunOutput {
        summary,
        log,
        history: outcome.steps,
    })
}

/// Feature vector of every scored sample, client by client.
pub fn sample_features(pool: &ClientPool, seasonal_period: usize) -> Result<Vec<Vec<FeatureVector>>> {
    pool.clients()
        .par_iter()
        .map(|c| {
            c.scored_samples()
                .map(|s| extract_features(&s.values, seasonal_period))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClustering {
    /// Ward cluster of each scored sample, in `scored_samples` order.
    pub sample_ids: BTreeMap<ClientId, Vec<ClusterId>>,
    /// Majority cluster over each client's clustering samples.
    pub assignment: BTreeMap<ClientId, ClusterId>,
}

/// Ward clustering of standardized per-sample features; a client joins the
/// cluster most of its clustering samples fall into.
pub fn baseline_assignment(pool: &ClientPool, k: usize, seasonal_period: usize) -> Result<FeatureClustering> {
    let per_client = sample_features(pool, seasonal_period)?;
    let flat: Vec<FeatureVector> = per_client.iter().flatten().copied().collect();
    let tree = agglomerative_cluster(&standardize(&flat), k)?;
    let mut labels = tree.assignments.into_iter();
    let mut sample_ids = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    for (c, feats) in pool.clients().iter().zip(&per_client) {
        let ids: Vec<ClusterId> = labels.by_ref().take(feats.len()).collect();
        let voters = &ids[..c.cluster_samples.len().min(ids.len())];
        let id = majority_cluster_id(voters)
            .ok_or_else(|| Error::structural(format!("client {} has no clustering samples", c.id)))?;
        assignment.insert(c.id, id);
        sample_ids.insert(c.id, ids);
    }
    Ok(FeatureClustering { sample_ids, assignment })
}

/// Feature clustering followed by per-cluster training without calibration.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut pool = build_pool(cfg)?;
    let seeds = SeedTree::new(cfg.seed).named("baseline");
    let k = cfg.baseline_k();
    let FeatureClustering { sample_ids, assignment } = baseline_assignment(&pool, k, cfg.baseline.seasonal_period)?;
    let clustering_purity = sample_pairs(&pool, |c, i| sample_ids[&c][i])
        .map(purity_of_pairs)
        .transpose()?;
    let clustering_client_purity = client_purity(&pool, &assignment)?;
    let arch = cfg.training.forecaster_arch(pool.shape)?;
    let mut reg = ClusterRegistry::with_fresh_models(
        assignment,
        1..=k as ClusterId,
        &arch,
        &seeds.named("models"),
    )?;
    let training = Phase2Config {
        calibration_rounds: Default::default(),
        ..cfg.training.clone()
    };
    let mut log = RunLog::new();
    let all = pool.ids();
    let ids = reg.ids();
    run_phase2(
        &mut reg,
        &mut pool,
        &all,
        &ids,
        &training,
        &seeds.named("training"),
        cfg.overwrite.map(|o| OverwriteAt { round: o.round }),
        &mut log,
        1,
    )?;
    reg.compact();
    let summary = finish(
        RunKind::Baseline,
        cfg,
        &reg,
        &pool,
        clustering_purity,
        clustering_client_purity,
        1,
    )?;
    Ok(RunOutput {
        summary,
        log,
        history: Vec::new(),
    })
}

/// Runs `f` on a dedicated pool of `workers` threads. Results do not depend
/// on the worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::structural(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const HISTORY_FILE: &str = "assignments.json";
pub const CONFIG_FILE: &str = "config.toml";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes summary, metrics log, assignment history and the resolved config
/// into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(SUMMARY_FILE), &(serde_json::to_string_pretty(&out.summary)? + "\n"))?;
    write(&dir.join(METRICS_FILE), &out.log.to_jsonl()?)?;
    write(&dir.join(HISTORY_FILE), &(serde_json::to_string_pretty(&out.history)? + "\n"))?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::structural(format!("{} has no {SUMMARY_FILE}", dir.display())),
        _ => Error::io(&path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}
