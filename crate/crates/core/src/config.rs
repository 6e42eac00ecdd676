//! Experiment configuration: TOML with strict keys, layered over a preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetFormat, HandoverSynthConfig, LongSeriesLayout, Normalization, SplitSpec, ToyConfig};
use crate::divisive::DivisiveConfig;
use crate::error::{Error, Result};
use crate::fedsim::Phase1Config;
use crate::hypcluster::Phase2Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Round counts as published.
    #[default]
    Paper,
    /// Reduced rounds that finish in minutes on one core.
    Desk,
}

const DESK_PRESET: &str = r#"
[clustering]
rounds = 2000

[training]
train_rounds = 40
calibration_rounds = [16, 32]

[divisive]
max_rounds = 2
split_rounds = 1000
"#;

impl Preset {
    fn table(self) -> toml::Table {
        match self {
            Preset::Paper => toml::Table::new(),
            Preset::Desk => DESK_PRESET.parse().expect("desk preset is valid TOML"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Labeled short series or a matrix of long series read from `path`.
    File,
    /// Generated sinusoid classes.
    #[default]
    Toy,
    /// Generated handover-shaped long series.
    Handover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Ground-truth sidecar (one integer per series) for scoring only.
    pub labels: Option<PathBuf>,
    /// Defaults to dataset-wide min-max for short labeled series and
    /// per-series min-max for long series.
    pub normalization: Option<Normalization>,
    pub n_clients: usize,
    /// Share of each short series fed to the forecaster as input.
    pub forecast_input_fraction: f64,
    pub split: SplitSpec,
    pub long_series: LongSeriesLayout,
    pub toy: ToyConfig,
    pub handover: HandoverSynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DataSource::Toy,
            path: None,
            format: DatasetFormat::Labeled,
            labels: None,
            normalization: None,
            n_clients: 30,
            forecast_input_fraction: 0.7,
            split: SplitSpec::default(),
            long_series: LongSeriesLayout::default(),
            toy: ToyConfig::default(),
            handover: HandoverSynthConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// True when every client holds one long series rather than a share of
    /// short labeled series.
    pub fn is_long(&self) -> bool {
        match self.source {
            DataSource::File => self.format == DatasetFormat::Matrix,
            DataSource::Toy => false,
            DataSource::Handover => true,
        }
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization.unwrap_or(if self.is_long() {
            Normalization::PerSeriesMinmax
        } else {
            Normalization::DatasetMinmax
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub seasonal_period: usize,
    /// Cluster count; the clustering phase's K when unset.
    pub k: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            seasonal_period: 24,
            k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverwriteConfig {
    /// Global training round of the first divisive round before which one
    /// client's data is replaced.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub clustering: Phase1Config,
    pub training: Phase2Config,
    pub divisive: DivisiveConfig,
    pub baseline: BaselineConfig,
    pub overwrite: Option<OverwriteConfig>,
}

/// Recursively overlays `top` onto `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first key named in a schema error such as "unknown field
/// `x`", or 0 when it cannot be located.
fn line_of_key(text: &str, message: &str) -> usize {
    let Some(key) = message.split('`').nth(1) else {
        return 0;
    };
    text.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

impl ExperimentConfig {
    /// Parses `text` on top of `preset` and validates the result. Relative
    /// paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, preset: Preset, source: &Path, base_dir: &Path) -> Result<Self> {
        let parse_err = |e: toml::de::Error| Error::Parse {
            path: source.to_path_buf(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        };
        let user: toml::Table = text.parse().map_err(parse_err)?;
        let mut table = preset.table();
        merge(&mut table, user);
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse {
                path: source.to_path_buf(),
                line: line_of_key(text, e.message()),
                message: e.message().to_string(),
            })?;
        for p in [&mut cfg.dataset.path, &mut cfg.dataset.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_toml(&text, preset, path, base)
    }

    /// Preset values with no file on top.
    pub fn preset(preset: Preset) -> Self {
        ExperimentConfig::from_toml("", preset, Path::new("<preset>"), Path::new("."))
            .expect("presets are valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn baseline_k(&self) -> usize {
        self.baseline.k.unwrap_or(self.clustering.latent.k)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        d.split.validate("dataset.split")?;
        if d.source == DataSource::File && d.path.is_none() {
            return Err(Error::config("dataset.path", "required when source = \"file\""));
        }
        if d.n_clients == 0 {
            return Err(Error::config("dataset.n_clients", "must be at least 1"));
        }
        if !(d.forecast_input_fraction > 0.0 && d.forecast_input_fraction < 1.0) {
            return Err(Error::config("dataset.forecast_input_fraction", "must lie in (0, 1)"));
        }
        let l = &d.long_series;
        if !(l.input_fraction > 0.0 && l.input_fraction < 1.0) {
            return Err(Error::config("dataset.long_series.input_fraction", "must lie in (0, 1)"));
        }
        if l.window_len < 2 || l.shift == 0 || l.segment_len == 0 {
            return Err(Error::config(
                "dataset.long_series",
                "window_len must be at least 2, shift and segment_len at least 1",
            ));
        }
        self.clustering.validate("clustering")?;
        self.training.validate("training")?;
        self.divisive.validate("divisive")?;
        if self.baseline.seasonal_period == 0 {
            return Err(Error::config("baseline.seasonal_period", "must be at least 1"));
        }
        if self.baseline.k == Some(0) {
            return Err(Error::config("baseline.k", "must be at least 1"));
        }
        if let Some(o) = self.overwrite {
            let last = self.training.hyp_rounds * self.training.train_rounds;
            if o.round == 0 || o.round > last {
                return Err(Error::config(
                    "overwrite.round",
                    format!("must lie in 1..={last}"),
                ));
            }
        }
        Ok(())
    }
}
