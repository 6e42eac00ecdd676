use serde::{Deserialize, Serialize};

use super::arch::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub l2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Rmsprop,
            learning_rate: 0.001,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-7,
            l2: 0.0005,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            l2: 0.0,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                format!("{field}.learning_rate"),
                "must be a finite non-negative number",
            ));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::config(
                format!("{field}.rmsprop_decay"),
                "must lie in (0, 1)",
            ));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::config(
                format!("{field}.rmsprop_epsilon"),
                "must be positive",
            ));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config(format!("{field}.l2"), "must be non-negative"));
        }
        Ok(())
    }
}

/// Optimizer with its per-parameter running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    accumulators: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Self {
        let accumulators = match config.kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Rmsprop => vec![0.0; param_count],
        };
        OptimizerState {
            config,
            accumulators,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    /// Applies one update in place. Parameters are untouched when any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::structural(format!(
                "gradient has {} entries, params {}",
                grads.len(),
                params.len()
            )));
        }
        if let Some(index) = grads.values().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                index,
                message: "non-finite gradient".into(),
            });
        }
        let OptimizerConfig {
            learning_rate: lr,
            l2,
            rmsprop_decay: decay,
            rmsprop_epsilon: eps,
            ..
        } = self.config;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.values_mut().iter_mut().zip(grads.values()) {
                    *p -= lr * (g + l2 * *p);
                }
            }
            OptimizerKind::Rmsprop => {
                if self.accumulators.len() != grads.len() {
                    return Err(Error::structural("optimizer state shape mismatch"));
                }
                for ((p, &g), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grads.values())
                    .zip(self.accumulators.iter_mut())
                {
                    *v = decay * *v + (1.0 - decay) * g * g;
                    *p -= lr * (g + l2 * *p) / (*v + eps).sqrt();
                }
            }
        }
        Ok(())
    }
}
