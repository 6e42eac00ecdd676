use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Leaky ReLU with slope 0.2 on the negative side.
    LeakyRelu,
    Sigmoid,
    Tanh,
}

const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => super::sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Parameters: weights `[outputs][inputs]` row-major, then `outputs` biases.
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Consumes `steps` frames of `features` values and emits the last hidden
    /// state. Parameters: input kernel `[4H][features]`, recurrent kernel
    /// `[4H][H]`, bias `[4H]`; gate blocks ordered input, forget, cell, output.
    Lstm {
        steps: usize,
        features: usize,
        hidden: usize,
    },
}

impl Layer {
    pub fn input_width(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Lstm {
                steps, features, ..
            } => steps * features,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Lstm { hidden, .. } => hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense {
                inputs, outputs, ..
            } => outputs * inputs + outputs,
            Layer::Lstm {
                features, hidden, ..
            } => 4 * hidden * (features + hidden + 1),
        }
    }
}

/// Layer stack descriptor. Widths of consecutive layers always chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    layers: Vec<Layer>,
}

impl Arch {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::structural("architecture has no layers"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_width() == 0 || layer.output_width() == 0 {
                return Err(Error::structural(format!("layer {i} has a zero width")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::structural(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    i,
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        Ok(Arch { layers })
    }

    /// Fully connected stack `input -> hidden... -> output`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
                activation: hidden_activation,
            });
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: output,
            activation: output_activation,
        });
        Arch::new(layers)
    }

    /// Single LSTM layer over a univariate window followed by a linear layer
    /// that emits the whole horizon at once.
    pub fn lstm_forecaster(input_len: usize, units: usize, horizon: usize) -> Result<Self> {
        Arch::new(vec![
            Layer::Lstm {
                steps: input_len,
                features: 1,
                hidden: units,
            },
            Layer::Dense {
                inputs: units,
                outputs: horizon,
                activation: Activation::Linear,
            },
        ])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    arch: Arch,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new(arch: Arch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::structural(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                index,
                message: "non-finite parameter".into(),
            });
        }
        Ok(ParamSet { arch, values })
    }

    pub fn zeros(arch: Arch) -> Self {
        let n = arch.param_count();
        ParamSet {
            arch,
            values: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(arch.param_count());
        for layer in arch.layers() {
            match *layer {
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    push_glorot(&mut values, inputs, outputs, outputs * inputs, rng);
                    values.extend(std::iter::repeat_n(0.0, outputs));
                }
                Layer::Lstm {
                    features, hidden, ..
                } => {
                    push_glorot(&mut values, features, 4 * hidden, 4 * hidden * features, rng);
                    push_glorot(&mut values, hidden, 4 * hidden, 4 * hidden * hidden, rng);
                    for gate in 0..4 {
                        let bias = if gate == 1 { 1.0 } else { 0.0 };
                        values.extend(std::iter::repeat_n(bias, hidden));
                    }
                }
            }
        }
        ParamSet { arch, values }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.arch == other.arch
    }
}

fn push_glorot<R: Rng + ?Sized>(
    out: &mut Vec<f64>,
    fan_in: usize,
    fan_out: usize,
    count: usize,
    rng: &mut R,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    out.extend((0..count).map(|_| rng.random_range(-limit..=limit)));
}

/// Gradient buffer congruent with one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            values: vec![0.0; params.len()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Gradients { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn param_counts() {
        let mlp = Arch::mlp(3, &[4], 2, Activation::Relu, Activation::Linear).unwrap();
        assert_eq!(mlp.param_count(), 4 * 3 + 4 + 2 * 4 + 2);
        let lstm = Arch::lstm_forecaster(16, 8, 8).unwrap();
        assert_eq!(lstm.param_count(), 4 * 8 * (1 + 8 + 1) + 8 * 8 + 8);
        assert_eq!(lstm.input_width(), 16);
        assert_eq!(lstm.output_width(), 8);
    }

    #[test]
    fn rejects_broken_chains() {
        let err = Arch::new(vec![
            Layer::Dense {
                inputs: 2,
                outputs: 3,
                activation: Activation::Linear,
            },
            Layer::Dense {
                inputs: 4,
                outputs: 1,
                activation: Activation::Linear,
            },
        ]);
        assert!(err.is_err());
        assert!(Arch::new(vec![]).is_err());
    }

    #[test]
    fn init_respects_glorot_bounds_and_forget_bias() {
        let arch = Arch::lstm_forecaster(5, 3, 2).unwrap();
        let p = ParamSet::init(arch, &mut SeedTree::new(1).rng());
        let limit_x = (6.0f64 / (1 + 12) as f64).sqrt();
        assert!(p.values()[..12].iter().all(|v| v.abs() <= limit_x));
        let bias_start = 12 + 36;
        assert_eq!(&p.values()[bias_start..bias_start + 3], &[0.0; 3]);
        assert_eq!(&p.values()[bias_start + 3..bias_start + 6], &[1.0; 3]);
    }

    #[test]
    fn paramset_checks_length_and_finiteness() {
        let arch = Arch::mlp(1, &[], 1, Activation::Linear, Activation::Linear).unwrap();
        assert!(ParamSet::new(arch.clone(), vec![1.0]).is_err());
        assert!(matches!(
            ParamSet::new(arch.clone(), vec![1.0, f64::NAN]),
            Err(Error::Numeric { index: 1, .. })
        ));
        assert!(ParamSet::new(arch, vec![1.0, 0.0]).is_ok());
    }
}
