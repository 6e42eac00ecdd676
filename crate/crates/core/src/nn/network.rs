use super::arch::{Activation, Gradients, Layer, ParamSet};
use super::sigmoid;
use crate::error::{Error, Result};

/// Intermediate values recorded by [`forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
enum LayerTrace {
    Dense {
        pre: Vec<f64>,
        out: Vec<f64>,
    },
    Lstm {
        /// Post-activation gates per step, `[steps][4H]`.
        gates: Vec<f64>,
        /// Cell states `[steps + 1][H]`, row 0 is the zero initial state.
        cells: Vec<f64>,
        /// Hidden states `[steps + 1][H]`, row 0 is the zero initial state.
        hiddens: Vec<f64>,
        hidden: usize,
    },
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        match self.layers.last() {
            Some(layer) => layer.output(),
            None => &self.input,
        }
    }

    fn layer_input(&self, index: usize) -> &[f64] {
        if index == 0 {
            &self.input
        } else {
            self.layers[index - 1].output()
        }
    }
}

impl LayerTrace {
    fn output(&self) -> &[f64] {
        match self {
            LayerTrace::Dense { out, .. } => out,
            LayerTrace::Lstm { hiddens, hidden, .. } => &hiddens[hiddens.len() - hidden..],
        }
    }
}

pub fn forward(params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    let (out, _) = forward_trace(params, input)?;
    Ok(out)
}

pub fn forward_trace(params: &ParamSet, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
    let arch = params.arch();
    if input.len() != arch.input_width() {
        return Err(Error::structural(format!(
            "input has {} values, network expects {}",
            input.len(),
            arch.input_width()
        )));
    }
    let values = params.values();
    let mut offset = 0;
    let mut layers = Vec::with_capacity(arch.layers().len());
    let mut current: Vec<f64> = input.to_vec();
    for layer in arch.layers() {
        let n = layer.param_count();
        let w = &values[offset..offset + n];
        offset += n;
        let trace = match *layer {
            Layer::Dense {
                inputs,
                outputs,
                activation,
            } => dense_forward(w, &current, inputs, outputs, activation),
            Layer::Lstm {
                steps,
                features,
                hidden,
            } => lstm_forward(w, &current, steps, features, hidden),
        };
        current = trace.output().to_vec();
        layers.push(trace);
    }
    Ok((
        current,
        Trace {
            input: input.to_vec(),
            layers,
        },
    ))
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the network input.
pub fn backward_trace(
    params: &ParamSet,
    trace: &Trace,
    upstream: &[f64],
    grads: &mut Gradients,
) -> Result<Vec<f64>> {
    let arch = params.arch();
    if upstream.len() != arch.output_width() {
        return Err(Error::structural(format!(
            "upstream gradient has {} values, network emits {}",
            upstream.len(),
            arch.output_width()
        )));
    }
    if grads.len() != params.len() || trace.layers.len() != arch.layers().len() {
        return Err(Error::structural("gradient buffer or trace does not match params"));
    }
    let values = params.values();
    let mut offsets = Vec::with_capacity(arch.layers().len());
    let mut offset = 0;
    for layer in arch.layers() {
        offsets.push(offset);
        offset += layer.param_count();
    }
    let mut delta = upstream.to_vec();
    for (index, layer) in arch.layers().iter().enumerate().rev() {
        let start = offsets[index];
        let n = layer.param_count();
        let w = &values[start..start + n];
        let g = &mut grads.values_mut()[start..start + n];
        let input = trace.layer_input(index);
        delta = match (layer, &trace.layers[index]) {
            (
                &Layer::Dense {
                    inputs,
                    outputs,
                    activation,
                },
                LayerTrace::Dense { pre, out },
            ) => dense_backward(w, g, input, pre, out, &delta, inputs, outputs, activation),
            (
                &Layer::Lstm {
                    steps,
                    features,
                    hidden,
                },
                LayerTrace::Lstm {
                    gates,
                    cells,
                    hiddens,
                    ..
                },
            ) => lstm_backward(
                w, g, input, gates, cells, hiddens, &delta, steps, features, hidden,
            ),
            _ => return Err(Error::structural("trace does not match architecture")),
        };
    }
    Ok(delta)
}

/// Gradient of `upstream · f(input)` with respect to every parameter.
pub fn backward(params: &ParamSet, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
    let (_, trace) = forward_trace(params, input)?;
    let mut grads = Gradients::zeros_like(params);
    backward_trace(params, &trace, upstream, &mut grads)?;
    Ok(grads)
}

fn dense_forward(
    w: &[f64],
    x: &[f64],
    inputs: usize,
    outputs: usize,
    activation: Activation,
) -> LayerTrace {
    let (weights, bias) = w.split_at(outputs * inputs);
    let mut pre = Vec::with_capacity(outputs);
    for (row, b) in weights.chunks_exact(inputs).zip(bias) {
        pre.push(b + dot(row, x));
    }
    let out = pre.iter().map(|&z| activation.apply(z)).collect();
    LayerTrace::Dense { pre, out }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    w: &[f64],
    g: &mut [f64],
    x: &[f64],
    pre: &[f64],
    out: &[f64],
    upstream: &[f64],
    inputs: usize,
    outputs: usize,
    activation: Activation,
) -> Vec<f64> {
    let (weights, _) = w.split_at(outputs * inputs);
    let (gw, gb) = g.split_at_mut(outputs * inputs);
    let mut dx = vec![0.0; inputs];
    for o in 0..outputs {
        let dz = upstream[o] * activation.derivative(pre[o], out[o]);
        if dz == 0.0 {
            continue;
        }
        gb[o] += dz;
        let row = &weights[o * inputs..(o + 1) * inputs];
        let grow = &mut gw[o * inputs..(o + 1) * inputs];
        for i in 0..inputs {
            grow[i] += dz * x[i];
            dx[i] += dz * row[i];
        }
    }
    dx
}

fn lstm_forward(w: &[f64], x: &[f64], steps: usize, features: usize, hidden: usize) -> LayerTrace {
    let gh = 4 * hidden;
    let (wx, rest) = w.split_at(gh * features);
    let (wh, bias) = rest.split_at(gh * hidden);
    let mut gates = vec![0.0; steps * gh];
    let mut cells = vec![0.0; (steps + 1) * hidden];
    let mut hiddens = vec![0.0; (steps + 1) * hidden];
    let mut a = vec![0.0; gh];
    for t in 0..steps {
        let xt = &x[t * features..(t + 1) * features];
        let h_prev = &hiddens[t * hidden..(t + 1) * hidden];
        for r in 0..gh {
            a[r] = bias[r]
                + dot(&wx[r * features..(r + 1) * features], xt)
                + dot(&wh[r * hidden..(r + 1) * hidden], h_prev);
        }
        let gt = &mut gates[t * gh..(t + 1) * gh];
        for u in 0..hidden {
            gt[u] = sigmoid(a[u]);
            gt[hidden + u] = sigmoid(a[hidden + u]);
            gt[2 * hidden + u] = a[2 * hidden + u].tanh();
            gt[3 * hidden + u] = sigmoid(a[3 * hidden + u]);
        }
        for u in 0..hidden {
            let c_prev = cells[t * hidden + u];
            let c = gt[hidden + u] * c_prev + gt[u] * gt[2 * hidden + u];
            cells[(t + 1) * hidden + u] = c;
            hiddens[(t + 1) * hidden + u] = gt[3 * hidden + u] * c.tanh();
        }
    }
    LayerTrace::Lstm {
        gates,
        cells,
        hiddens,
        hidden,
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    w: &[f64],
    g: &mut [f64],
    x: &[f64],
    gates: &[f64],
    cells: &[f64],
    hiddens: &[f64],
    upstream: &[f64],
    steps: usize,
    features: usize,
    hidden: usize,
) -> Vec<f64> {
    let gh = 4 * hidden;
    let (wx, rest) = w.split_at(gh * features);
    let (wh, _) = rest.split_at(gh * hidden);
    let (gwx, grest) = g.split_at_mut(gh * features);
    let (gwh, gb) = grest.split_at_mut(gh * hidden);

    let mut dx = vec![0.0; steps * features];
    let mut dh = upstream.to_vec();
    let mut dc = vec![0.0; hidden];
    let mut da = vec![0.0; gh];
    for t in (0..steps).rev() {
        let gt = &gates[t * gh..(t + 1) * gh];
        let c_prev = &cells[t * hidden..(t + 1) * hidden];
        let c = &cells[(t + 1) * hidden..(t + 2) * hidden];
        let h_prev = &hiddens[t * hidden..(t + 1) * hidden];
        let xt = &x[t * features..(t + 1) * features];
        for u in 0..hidden {
            let (i, f, gg, o) = (gt[u], gt[hidden + u], gt[2 * hidden + u], gt[3 * hidden + u]);
            let tc = c[u].tanh();
            let d_o = dh[u] * tc;
            dc[u] += dh[u] * o * (1.0 - tc * tc);
            let d_i = dc[u] * gg;
            let d_g = dc[u] * i;
            let d_f = dc[u] * c_prev[u];
            da[u] = d_i * i * (1.0 - i);
            da[hidden + u] = d_f * f * (1.0 - f);
            da[2 * hidden + u] = d_g * (1.0 - gg * gg);
            da[3 * hidden + u] = d_o * o * (1.0 - o);
            dc[u] *= f;
        }
        let dxt = &mut dx[t * features..(t + 1) * features];
        let mut dh_prev = vec![0.0; hidden];
        for r in 0..gh {
            let d = da[r];
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            let wx_row = &wx[r * features..(r + 1) * features];
            let gwx_row = &mut gwx[r * features..(r + 1) * features];
            for k in 0..features {
                gwx_row[k] += d * xt[k];
                dxt[k] += d * wx_row[k];
            }
            let wh_row = &wh[r * hidden..(r + 1) * hidden];
            let gwh_row = &mut gwh[r * hidden..(r + 1) * hidden];
            for k in 0..hidden {
                gwh_row[k] += d * h_prev[k];
                dh_prev[k] += d * wh_row[k];
            }
        }
        dh = dh_prev;
    }
    dx
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse_grad, mse_loss, Arch};
    use crate::rng::SeedTree;
    use rand::Rng;

    fn identity_layer() -> ParamSet {
        let arch = Arch::mlp(2, &[], 2, Activation::Linear, Activation::Linear).unwrap();
        ParamSet::new(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let arch = Arch::mlp(3, &[4, 2], 2, Activation::Relu, Activation::Linear).unwrap();
        let p = ParamSet::zeros(arch);
        assert_eq!(forward(&p, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_dense_layer() {
        assert_eq!(forward(&identity_layer(), &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn input_width_is_checked() {
        assert!(matches!(
            forward(&identity_layer(), &[1.0]),
            Err(Error::Structural(_))
        ));
        assert!(backward(&identity_layer(), &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let arch = Arch::lstm_forecaster(4, 3, 2).unwrap();
        let p = ParamSet::init(arch, &mut SeedTree::new(3).rng());
        let g = backward(&p, &[0.1, 0.5, 0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    /// One-unit LSTM with hand-set weights, traced step by step.
    #[test]
    fn lstm_unit_matches_hand_trace() {
        // gates i, f, g, o: wx, wh, b
        let (wx, wh, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.7], [0.0, 1.0, 0.1, -0.2]);
        let mut values = Vec::new();
        values.extend(wx);
        values.extend(wh);
        values.extend(b);
        let arch = Arch::new(vec![Layer::Lstm {
            steps: 3,
            features: 1,
            hidden: 1,
        }])
        .unwrap();
        let p = ParamSet::new(arch, values).unwrap();
        let xs = [1.0, -0.5, 2.0];

        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let i = s(wx[0] * x + wh[0] * h + b[0]);
            let f = s(wx[1] * x + wh[1] * h + b[1]);
            let g = (wx[2] * x + wh[2] * h + b[2]).tanh();
            let o = s(wx[3] * x + wh[3] * h + b[3]);
            c = f * c + i * g;
            h = o * c.tanh();
        }
        let out = forward(&p, &xs).unwrap();
        assert!((out[0] - h).abs() < 1e-15, "{} vs {}", out[0], h);
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let arch = Arch::lstm_forecaster(6, 4, 3).unwrap();
        let p = ParamSet::init(arch, &mut SeedTree::new(9).rng());
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = forward(&p, &x).unwrap();
        let b = forward(&p, &x).unwrap();
        assert_eq!(a, b);
        let ga = backward(&p, &x, &[1.0, -1.0, 0.5]).unwrap();
        let gb = backward(&p, &x, &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn linear_model_gradient_matches_finite_differences() {
        // y = w x + b with squared loss.
        let arch = Arch::mlp(1, &[], 1, Activation::Linear, Activation::Linear).unwrap();
        let mut rng = SeedTree::new(5).rng();
        for _ in 0..20 {
            let p = ParamSet::new(
                arch.clone(),
                vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            )
            .unwrap();
            let x = rng.random_range(-3.0..3.0);
            let y = rng.random_range(-3.0..3.0);
            let loss = |q: &ParamSet| mse_loss(&forward(q, &[x]).unwrap(), &[y]).unwrap();
            let pred = forward(&p, &[x]).unwrap();
            let g = backward(&p, &[x], &mse_grad(&pred, &[y])).unwrap();
            for k in 0..2 {
                let h = 1e-5;
                let mut plus = p.clone();
                plus.values_mut()[k] += h;
                let mut minus = p.clone();
                minus.values_mut()[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = g.values()[k];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6));
            }
        }
    }
}
