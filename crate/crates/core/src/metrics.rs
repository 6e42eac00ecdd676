//! Purity, membership-weighted losses and the per-round run log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ClassId, ClientId};
use crate::error::{Error, Result};
use crate::ClusterId;

/// `1/N * sum over clusters of the majority-class count`.
pub fn purity<K: Ord + std::fmt::Debug>(
    assignments: &BTreeMap<K, ClusterId>,
    labels: &BTreeMap<K, ClassId>,
) -> Result<f64> {
    if assignments.len() != labels.len() || !assignments.keys().eq(labels.keys()) {
        return Err(Error::structural(
            "assignments and labels cover different sample sets",
        ));
    }
    purity_of_pairs(assignments.keys().map(|k| (assignments[k], labels[k])))
}

/// Purity over `(cluster, class)` pairs, one pair per sample.
pub fn purity_of_pairs(pairs: impl IntoIterator<Item = (ClusterId, ClassId)>) -> Result<f64> {
    let mut table: BTreeMap<ClusterId, BTreeMap<ClassId, usize>> = BTreeMap::new();
    let mut n = 0usize;
    for (cluster, class) in pairs {
        *table.entry(cluster).or_default().entry(class).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::structural("purity of an empty sample set"));
    }
    let hits: usize = table
        .values()
        .map(|row| row.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / n as f64)
}

/// `sum_i (count_i / sum counts) * loss_i`.
pub fn weighted_forecast_loss(
    per_cluster_loss: &BTreeMap<ClusterId, f64>,
    member_counts: &BTreeMap<ClusterId, usize>,
) -> Result<f64> {
    if per_cluster_loss.is_empty() || !per_cluster_loss.keys().eq(member_counts.keys()) {
        return Err(Error::structural("loss and member-count keys differ"));
    }
    if member_counts.values().any(|&c| c == 0) {
        return Err(Error::structural("member counts must be positive"));
    }
    let total: usize = member_counts.values().sum();
    let weighted: f64 = per_cluster_loss
        .iter()
        .map(|(id, loss)| member_counts[id] as f64 * loss)
        .sum();
    let value = weighted / total as f64;
    // keep inside the convex hull despite rounding
    let lo = per_cluster_loss.values().copied().fold(f64::INFINITY, f64::min);
    let hi = per_cluster_loss.values().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(value.clamp(lo, hi))
}

/// Short stable digest of a client -> cluster map.
pub fn assignment_hash(assignment: &BTreeMap<ClientId, ClusterId>) -> String {
    let mut hasher = Sha256::new();
    for (client, cluster) in assignment {
        hasher.update((*client as u64).to_le_bytes());
        hasher.update(cluster.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for b in &digest[..8] {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Clustering,
    Training,
    Calibration,
    Division,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub divisive_round: usize,
    pub phase: Phase,
    pub global_round: usize,
    pub per_cluster_losses: BTreeMap<ClusterId, f64>,
    pub cluster_members: BTreeMap<ClusterId, usize>,
    pub weighted_loss: Option<f64>,
    pub assignment_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_e_loss: Option<f64>,
}

impl MetricsRecord {
    pub fn new(divisive_round: usize, phase: Phase, global_round: usize) -> Self {
        MetricsRecord {
            divisive_round,
            phase,
            global_round,
            per_cluster_losses: BTreeMap::new(),
            cluster_members: BTreeMap::new(),
            weighted_loss: None,
            assignment_hash: String::new(),
            purity: None,
            d_loss: None,
            g_e_loss: None,
        }
    }

    /// Fills per-cluster losses and their membership-weighted mean.
    pub fn with_losses(
        mut self,
        per_cluster: BTreeMap<ClusterId, f64>,
        members: BTreeMap<ClusterId, usize>,
    ) -> Result<Self> {
        self.weighted_loss = Some(weighted_forecast_loss(&per_cluster, &members)?);
        self.per_cluster_losses = per_cluster;
        self.cluster_members = members;
        Ok(self)
    }

    pub fn with_assignment(mut self, assignment: &BTreeMap<ClientId, ClusterId>) -> Self {
        self.assignment_hash = assignment_hash(assignment);
        self
    }
}

/// Append-only log. Within one (divisive round, phase) run the round index
/// must strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    records: Vec<MetricsRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        RunLog::default()
    }

    pub fn record(&mut self, rec: MetricsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.divisive_round < last.divisive_round {
                return Err(Error::structural(format!(
                    "divisive round {} after {}",
                    rec.divisive_round, last.divisive_round
                )));
            }
            if rec.divisive_round == last.divisive_round
                && rec.phase == last.phase
                && rec.global_round <= last.global_round
            {
                return Err(Error::structural(format!(
                    "{:?} round {} recorded after round {}",
                    rec.phase, rec.global_round, last.global_round
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON document per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = RunLog::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            log.record(serde_json::from_str(line)?)?;
        }
        Ok(log)
    }
}
