//! Series containers, normalization, non-IID partitioning and client pools.

mod io;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    format_dataset, load_dataset, load_labels, parse_dataset, write_dataset, write_labels,
    DatasetFormat,
};
pub use synth::{synth_handover, toy_sinusoids, HandoverSynthConfig, SyntheticHandover, ToyConfig};

pub type ClientId = usize;
pub type ClassId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub values: Vec<f64>,
    pub label: Option<ClassId>,
    pub origin_client: Option<ClientId>,
}

impl TimeSeriesSample {
    pub fn new(values: Vec<f64>) -> Self {
        TimeSeriesSample {
            values,
            label: None,
            origin_client: None,
        }
    }

    pub fn labeled(values: Vec<f64>, label: ClassId) -> Self {
        TimeSeriesSample {
            values,
            label: Some(label),
            origin_client: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// One affine map from the global min/max to [0, 1].
    #[serde(rename = "dataset-minmax")]
    DatasetMinmax,
    /// Every series mapped to [0, 1] on its own.
    #[serde(rename = "per-series-minmax")]
    PerSeriesMinmax,
}

fn minmax_into(values: &mut [f64], lo: f64, hi: f64) {
    if hi > lo {
        let span = hi - lo;
        for v in values.iter_mut() {
            *v = ((*v - lo) / span).clamp(0.0, 1.0);
        }
    } else {
        values.iter_mut().for_each(|v| *v = 0.5);
    }
}

fn extent(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Constant series (or a constant dataset) map to 0.5.
pub fn normalize(samples: &mut [TimeSeriesSample], mode: Normalization) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::structural("cannot normalize an empty dataset"));
    }
    match mode {
        Normalization::PerSeriesMinmax => {
            for s in samples.iter_mut() {
                let (lo, hi) = extent(&s.values);
                minmax_into(&mut s.values, lo, hi);
            }
        }
        Normalization::DatasetMinmax => {
            let (lo, hi) = samples
                .iter()
                .map(|s| extent(&s.values))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
            for s in samples.iter_mut() {
                minmax_into(&mut s.values, lo, hi);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub overwrite: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            overwrite: 0.2,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        let parts = [self.train, self.overwrite, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config(field, "fractions must lie in [0, 1]"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(field, format!("fractions must sum to 1 (got {sum})")));
        }
        Ok(())
    }

    /// Sizes of the (train, overwrite, test) parts of `n` samples; train and
    /// overwrite are rounded down, test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64) + 1e-9).floor() as usize;
        let overwrite = (((self.overwrite * n as f64) + 1e-9).floor() as usize).min(n - train);
        (train, overwrite, n - train - overwrite)
    }
}

/// How a sample splits into forecaster input and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastShape {
    pub input_len: usize,
    pub horizon: usize,
}

impl ForecastShape {
    /// Leading `floor(fraction * len)` steps are input, the rest target.
    pub fn from_fraction(len: usize, fraction: f64) -> Result<Self> {
        let input_len = ((fraction * len as f64) + 1e-9).floor() as usize;
        if input_len == 0 || input_len >= len {
            return Err(Error::structural(format!(
                "input fraction {fraction} of length {len} leaves no input or no target"
            )));
        }
        Ok(ForecastShape {
            input_len,
            horizon: len - input_len,
        })
    }

    pub fn len(&self) -> usize {
        self.input_len + self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split<'a>(&self, sample: &'a TimeSeriesSample) -> (&'a [f64], &'a [f64]) {
        sample.values[..self.len()].split_at(self.input_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Client {
    pub id: ClientId,
    /// Samples the clustering phase sees (whole series or weekly segments).
    pub cluster_samples: Vec<TimeSeriesSample>,
    /// Forecaster training samples; their count is the aggregation weight.
    pub train: Vec<TimeSeriesSample>,
    pub overwrite: Vec<TimeSeriesSample>,
    pub test: Vec<TimeSeriesSample>,
}

impl Client {
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    /// Every sample the client holds, for sample-level scoring.
    pub fn all_samples(&self) -> impl Iterator<Item = &TimeSeriesSample> {
        self.cluster_samples
            .iter()
            .chain(&self.overwrite)
            .chain(&self.test)
    }

    /// Held samples the clustering model can read: those with the length of
    /// the clustering samples.
    pub fn scored_samples(&self) -> impl Iterator<Item = &TimeSeriesSample> {
        let len = self.cluster_samples.first().map(|s| s.values.len());
        self.all_samples().filter(move |s| Some(s.values.len()) == len)
    }

    /// Most frequent label among training samples, ties to the smallest.
    pub fn majority_label(&self) -> Option<ClassId> {
        let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
        for s in self.train.iter().chain(&self.cluster_samples) {
            if let Some(l) = s.label {
                *counts.entry(l).or_default() += 1;
            }
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, c)| c == best).map(|(l, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverwriteEvent {
    pub client: ClientId,
    pub previous_class: Option<ClassId>,
    pub new_class: ClassId,
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPool {
    clients: Vec<Client>,
    /// Ground-truth group per client when it is not carried by sample labels
    /// (synthetic archetypes). Only used for scoring.
    truth: BTreeMap<ClientId, ClassId>,
    pub shape: ForecastShape,
    pub events: Vec<OverwriteEvent>,
}

impl ClientPool {
    pub fn new(clients: Vec<Client>, shape: ForecastShape) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::structural("client pool is empty"));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::structural(format!(
                    "client ids must be 0..n in order, found {} at position {i}",
                    c.id
                )));
            }
            for s in c.train.iter().chain(&c.test) {
                if s.values.len() < shape.len() {
                    return Err(Error::structural(format!(
                        "client {i} has a sample of length {} shorter than the forecast window {}",
                        s.values.len(),
                        shape.len()
                    )));
                }
            }
        }
        Ok(ClientPool {
            clients,
            truth: BTreeMap::new(),
            shape,
            events: Vec::new(),
        })
    }

    pub fn with_truth(mut self, truth: BTreeMap<ClientId, ClassId>) -> Self {
        self.truth = truth;
        self
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn client(&self, id: ClientId) -> &Client {
        &self.clients[id]
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn ids(&self) -> Vec<ClientId> {
        (0..self.clients.len()).collect()
    }

    /// Total training sample count `n = sum n_c`.
    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(Client::n_train).sum()
    }

    /// Ground-truth class per client: sample-label majority, else the
    /// generator's archetype record.
    pub fn client_truth(&self) -> BTreeMap<ClientId, ClassId> {
        self.clients
            .iter()
            .filter_map(|c| {
                c.majority_label()
                    .or_else(|| self.truth.get(&c.id).copied())
                    .map(|l| (c.id, l))
            })
            .collect()
    }

    pub fn has_sample_labels(&self) -> bool {
        self.clients
            .iter()
            .flat_map(|c| c.all_samples())
            .all(|s| s.label.is_some())
    }

    fn overwrite_store(&self) -> BTreeMap<ClassId, Vec<&TimeSeriesSample>> {
        let mut store: BTreeMap<ClassId, Vec<&TimeSeriesSample>> = BTreeMap::new();
        for c in &self.clients {
            for s in &c.overwrite {
                if let Some(l) = s.label {
                    store.entry(l).or_default().push(s);
                }
            }
        }
        store
    }

    /// Replaces one uniformly chosen client's train and test data by
    /// overwrite-partition samples of one uniformly chosen class, keeping the
    /// client's sample counts.
    pub fn apply_overwrite_event<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        round: Option<usize>,
    ) -> Result<OverwriteEvent> {
        let store = self.overwrite_store();
        if store.is_empty() {
            return Err(Error::structural("overwrite partitions are empty"));
        }
        let client = rng.random_range(0..self.clients.len());
        let classes: Vec<ClassId> = store.keys().copied().collect();
        let new_class = classes[rng.random_range(0..classes.len())];
        let mut pool: Vec<TimeSeriesSample> = store[&new_class].iter().map(|s| (*s).clone()).collect();
        pool.shuffle(rng);

        let previous_class = self.clients[client].majority_label();
        let target = &mut self.clients[client];
        let (n_train, n_test) = (target.train.len(), target.test.len());
        let mut drawn = pool.iter().cycle().cloned().map(|mut s| {
            s.origin_client = Some(client);
            s
        });
        target.train = drawn.by_ref().take(n_train).collect();
        target.test = drawn.take(n_test).collect();
        target.cluster_samples = target.train.clone();

        let event = OverwriteEvent {
            client,
            previous_class,
            new_class,
            round,
        };
        self.events.push(event.clone());
        Ok(event)
    }
}

/// Deals labeled samples to clients so that every client holds one class.
///
/// Client `i` gets class `classes[i % n_classes]`; samples of a class are dealt
/// round-robin among its clients, then each client's samples are cut into
/// train / overwrite / test parts in order.
pub fn partition_non_iid(
    samples: &[TimeSeriesSample],
    n_clients: usize,
    split: SplitSpec,
    shape: ForecastShape,
) -> Result<ClientPool> {
    let mut by_class: BTreeMap<ClassId, Vec<&TimeSeriesSample>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| Error::structural(format!("sample {i} has no class label")))?;
        by_class.entry(label).or_default().push(s);
    }
    let classes: Vec<ClassId> = by_class.keys().copied().collect();
    if classes.is_empty() {
        return Err(Error::structural("no samples to partition"));
    }
    if n_clients < classes.len() {
        return Err(Error::structural(format!(
            "{n_clients} clients cannot hold {} classes one per client",
            classes.len()
        )));
    }
    let mut buckets: Vec<Vec<TimeSeriesSample>> = vec![Vec::new(); n_clients];
    for (k, class) in classes.iter().enumerate() {
        let owners: Vec<usize> = (k..n_clients).step_by(classes.len()).collect();
        for (j, s) in by_class[class].iter().enumerate() {
            let owner = owners[j % owners.len()];
            let mut s = (*s).clone();
            s.origin_client = Some(owner);
            buckets[owner].push(s);
        }
    }
    let mut clients = Vec::with_capacity(n_clients);
    for (id, mut bucket) in buckets.into_iter().enumerate() {
        let (n_train, n_over, _) = split.sizes(bucket.len());
        if n_train == 0 {
            return Err(Error::structural(format!(
                "client {id} (class {}) receives {} samples, too few for a training split",
                classes[id % classes.len()],
                bucket.len()
            )));
        }
        let test = bucket.split_off(n_train + n_over);
        let overwrite = bucket.split_off(n_train);
        clients.push(Client {
            id,
            cluster_samples: bucket.clone(),
            train: bucket,
            overwrite,
            test,
        });
    }
    ClientPool::new(clients, shape)
}

/// Contiguous windows of `window_len` taken every `shift` steps.
pub fn window_augment(series: &[f64], window_len: usize, shift: usize) -> Result<Vec<Vec<f64>>> {
    if window_len == 0 || shift == 0 {
        return Err(Error::structural("window length and shift must be positive"));
    }
    if series.len() < window_len {
        return Err(Error::structural(format!(
            "window of {window_len} is longer than the series ({})",
            series.len()
        )));
    }
    Ok((0..=series.len() - window_len)
        .step_by(shift)
        .map(|start| series[start..start + window_len].to_vec())
        .collect())
}

/// Layout for long per-client series (one row per client).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongSeriesLayout {
    /// Steps `[0, train_len)` are training data, the rest is held out.
    pub train_len: usize,
    /// Clustering samples are consecutive segments of this length.
    pub segment_len: usize,
    pub window_len: usize,
    pub shift: usize,
    /// Fraction of a window used as forecaster input (rounded down).
    pub input_fraction: f64,
}

impl Default for LongSeriesLayout {
    fn default() -> Self {
        LongSeriesLayout {
            train_len: 1344,
            segment_len: 168,
            window_len: 19,
            shift: 1,
            input_fraction: 0.6,
        }
    }
}

/// Builds one client per long series. Training windows stay inside the
/// training range; test windows are those whose targets lie in the held-out
/// tail.
pub fn long_series_pool(
    series: &[TimeSeriesSample],
    layout: LongSeriesLayout,
    truth: Option<&[ClassId]>,
) -> Result<ClientPool> {
    let shape = ForecastShape::from_fraction(layout.window_len, layout.input_fraction)?;
    if let Some(t) = truth {
        if t.len() != series.len() {
            return Err(Error::structural(format!(
                "{} ground-truth labels for {} series",
                t.len(),
                series.len()
            )));
        }
    }
    let mut clients = Vec::with_capacity(series.len());
    for (id, s) in series.iter().enumerate() {
        let len = s.values.len();
        if layout.train_len >= len || layout.train_len < layout.window_len.max(layout.segment_len) {
            return Err(Error::structural(format!(
                "series {id} of length {len} does not fit training range {}",
                layout.train_len
            )));
        }
        let train_part = &s.values[..layout.train_len];
        let wrap = |values: Vec<f64>| TimeSeriesSample {
            values,
            label: None,
            origin_client: Some(id),
        };
        let cluster_samples = train_part
            .chunks_exact(layout.segment_len)
            .map(|c| wrap(c.to_vec()))
            .collect();
        let train = window_augment(train_part, layout.window_len, layout.shift)?
            .into_iter()
            .map(wrap)
            .collect();
        let test_start = layout.train_len.saturating_sub(shape.input_len);
        let test = window_augment(&s.values[test_start..], layout.window_len, layout.shift)?
            .into_iter()
            .map(wrap)
            .collect();
        clients.push(Client {
            id,
            cluster_samples,
            train,
            overwrite: Vec::new(),
            test,
        });
    }
    let pool = ClientPool::new(clients, shape)?;
    Ok(match truth {
        Some(t) => pool.with_truth(t.iter().copied().enumerate().collect()),
        None => pool,
    })
}
