use crate::error::{Error, Result};

/// Probabilities are clamped to this value before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::structural("loss of an empty sequence"));
    }
    if a.len() != b.len() {
        return Err(Error::structural(format!(
            "length mismatch: {} predicted vs {} target",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(predicted, target)?;
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Derivative of [`mse_loss`] with respect to `predicted`.
pub fn mse_grad(predicted: &[f64], target: &[f64]) -> Vec<f64> {
    let scale = 2.0 / predicted.len() as f64;
    predicted
        .iter()
        .zip(target)
        .map(|(p, t)| scale * (p - t))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pulls a gradient with respect to softmax probabilities back to the logits.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(upstream).map(|(p, u)| p * u).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, u)| p * (u - inner))
        .collect()
}

pub fn cross_entropy_loss(predicted: &[f64], one_hot: &[f64]) -> Result<f64> {
    check_pair(predicted, one_hot)?;
    let total: f64 = predicted.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::structural(format!(
            "predicted distribution sums to {total}"
        )));
    }
    let ones = one_hot.iter().filter(|&&t| t == 1.0).count();
    if ones != 1 || one_hot.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::structural("target is not one-hot"));
    }
    Ok(predicted
        .iter()
        .zip(one_hot)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROBABILITY_FLOOR).ln())
        .sum())
}

/// Derivative of [`cross_entropy_loss`] with respect to `predicted`.
pub fn cross_entropy_grad(predicted: &[f64], one_hot: &[f64]) -> Vec<f64> {
    predicted
        .iter()
        .zip(one_hot)
        .map(|(&p, &t)| {
            if t == 0.0 || p < PROBABILITY_FLOOR {
                0.0
            } else {
                -t / p
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 1.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - ln2).abs() < 1e-15);
        let v = cross_entropy_loss(&[0.9, 0.1], &[0.0, 1.0]).unwrap();
        assert!((v - (-(0.1f64).ln())).abs() < 1e-15);
        let exact = cross_entropy_loss(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!(exact.abs() < 1e-12);
        // Saturated wrong prediction is finite thanks to the floor.
        let floored = cross_entropy_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((floored - (-PROBABILITY_FLOOR.ln())).abs() < 1e-9);
        assert!(cross_entropy_loss(&[0.5], &[1.0, 0.0]).is_err());
        assert!(cross_entropy_loss(&[0.5, 0.2], &[1.0, 0.0]).is_err());
        assert!(cross_entropy_loss(&[0.5, 0.5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999);
        let u = softmax(&[0.3, 0.3]);
        assert_eq!(u, vec![0.5, 0.5]);
    }

    #[test]
    fn stable_scalar_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((log_sigmoid(2.0) - sigmoid(2.0).ln()).abs() < 1e-15);
    }
}
