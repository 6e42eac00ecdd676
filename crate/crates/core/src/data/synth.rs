//! Synthetic stand-ins for the private handover counts and a toy class set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassId, TimeSeriesSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoverSynthConfig {
    pub n_clients: usize,
    /// Hourly steps; 1392 is 58 days.
    pub length: usize,
    pub archetypes: usize,
    /// Noise standard deviation relative to the archetype amplitude.
    pub noise: f64,
}

impl Default for HandoverSynthConfig {
    fn default() -> Self {
        HandoverSynthConfig {
            n_clients: 149,
            length: 1392,
            archetypes: 3,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHandover {
    /// One hourly series per client, unlabeled.
    pub series: Vec<TimeSeriesSample>,
    /// Generator archetype per client (1-based). Scoring only.
    pub archetypes: Vec<ClassId>,
}

fn circular_gap(hour: f64, centre: f64) -> f64 {
    let d = (hour - centre).abs();
    d.min(24.0 - d)
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let d = circular_gap(hour, centre);
    (-d * d / width).exp()
}

/// Noise-free handover count of archetype `a` (0-based) at hour `t`.
pub fn archetype_curve(a: usize, t: usize) -> f64 {
    let hour = (t % 24) as f64;
    let weekend = matches!((t / 24) % 7, 5 | 6);
    let (amplitude, profile, weekend_factor) = match a {
        // commuter corridor: morning and evening peaks, quiet weekends
        0 => (200.0, 0.2 + bump(hour, 8.0, 4.0) + 0.8 * bump(hour, 18.0, 4.0), 0.4),
        // residential: late evening, busier weekends
        1 => (120.0, 0.3 + bump(hour, 21.0, 9.0), 1.3),
        // office district: daytime plateau
        2 => {
            let rise = 1.0 / (1.0 + (-(hour - 9.0)).exp());
            let fall = 1.0 / (1.0 + (hour - 17.0).exp());
            (300.0, 0.1 + rise * fall, 0.2)
        }
        _ => {
            let centre = ((3 + 7 * a) % 24) as f64;
            (150.0, 0.2 + bump(hour, centre, 6.0), 1.0)
        }
    };
    amplitude * profile * if weekend { weekend_factor } else { 1.0 }
}

fn archetype_amplitude(a: usize) -> f64 {
    match a {
        0 => 200.0,
        1 => 120.0,
        2 => 300.0,
        _ => 150.0,
    }
}

pub fn synth_handover<R: Rng + ?Sized>(
    cfg: &HandoverSynthConfig,
    rng: &mut R,
) -> Result<SyntheticHandover> {
    if cfg.n_clients == 0 || cfg.length == 0 || cfg.archetypes == 0 {
        return Err(Error::structural("generator sizes must be positive"));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::structural("noise must be non-negative"));
    }
    let mut assignment: Vec<usize> = (0..cfg.n_clients).map(|i| i % cfg.archetypes).collect();
    assignment.shuffle(rng);
    let mut series = Vec::with_capacity(cfg.n_clients);
    for (client, &a) in assignment.iter().enumerate() {
        let sd = cfg.noise * archetype_amplitude(a);
        let values = (0..cfg.length)
            .map(|t| {
                let clean = archetype_curve(a, t);
                if sd > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    (clean + sd * z).max(0.0)
                } else {
                    clean
                }
            })
            .collect();
        series.push(TimeSeriesSample {
            values,
            label: None,
            origin_client: Some(client),
        });
    }
    Ok(SyntheticHandover {
        series,
        archetypes: assignment.iter().map(|&a| a as ClassId + 1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub classes: usize,
    pub n: usize,
    pub length: usize,
    pub noise: f64,
    /// Phase offsets are uniform in `[-phase_jitter, phase_jitter]`.
    pub phase_jitter: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            classes: 3,
            n: 600,
            length: 24,
            noise: 0.05,
            phase_jitter: 0.3,
        }
    }
}

/// Class `c` (1-based) is a sinusoid with `c` cycles per series.
pub fn toy_sinusoids<R: Rng + ?Sized>(cfg: &ToyConfig, rng: &mut R) -> Result<Vec<TimeSeriesSample>> {
    if cfg.classes == 0 || cfg.length < 2 || cfg.n < cfg.classes {
        return Err(Error::structural("toy set needs classes >= 1, length >= 2, n >= classes"));
    }
    let len = cfg.length as f64;
    Ok((0..cfg.n)
        .map(|i| {
            let class = i % cfg.classes + 1;
            let phase = if cfg.phase_jitter > 0.0 {
                rng.random_range(-cfg.phase_jitter..=cfg.phase_jitter)
            } else {
                0.0
            };
            let values = (0..cfg.length)
                .map(|t| {
                    let angle = 2.0 * std::f64::consts::PI * class as f64 * t as f64 / len + phase;
                    let z: f64 = if cfg.noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    0.5 + 0.4 * angle.sin() + cfg.noise * z
                })
                .collect();
            TimeSeriesSample::labeled(values, class as ClassId)
        })
        .collect())
}
