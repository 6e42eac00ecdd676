use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 6] = [
    "mean",
    "std",
    "acf1",
    "trend_strength",
    "seasonal_strength",
    "spectral_entropy",
];

pub type FeatureVector = [f64; 6];

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// `max(0, 1 - num / den)`, zero when the denominator vanishes.
fn strength(num: f64, den: f64) -> f64 {
    if den <= f64::EPSILON * f64::EPSILON {
        0.0
    } else {
        (1.0 - num / den).max(0.0)
    }
}

fn acf1(x: &[f64], m: f64, var: f64) -> f64 {
    if var == 0.0 || x.len() < 2 {
        return 0.0;
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / (var * x.len() as f64)
}

/// Least-squares line through `(t, x_t)`.
fn linear_fit(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let x_mean = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (0..x.len())
        .map(|t| x_mean + slope * (t as f64 - t_mean))
        .collect()
}

/// Zero-mean seasonal profile from per-phase means of `x`, tiled to its
/// length.
fn seasonal_means(x: &[f64], period: usize) -> Vec<f64> {
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (t, v) in x.iter().enumerate() {
        sums[t % period] += v;
        counts[t % period] += 1;
    }
    let profile: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let centre = mean(&profile);
    (0..x.len()).map(|t| profile[t % period] - centre).collect()
}

/// Normalized Shannon entropy of the periodogram, DC term excluded.
fn spectral_entropy(x: &[f64], m: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if power.len() < 2 || total <= 0.0 {
        return 0.0;
    }
    let h: f64 = power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    (h / (power.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Mean, standard deviation, lag-1 autocorrelation, trend strength, seasonal
/// strength and spectral entropy of one series.
///
/// The series is linearly detrended; the seasonal part is the per-phase mean
/// of the detrended series when it spans two full periods, else zero.
/// Constant series get zero for every shape feature.
pub fn extract_features(values: &[f64], seasonal_period: usize) -> Result<FeatureVector> {
    if values.len() < 2 {
        return Err(Error::structural("features need a series of length at least 2"));
    }
    if seasonal_period == 0 {
        return Err(Error::config("baseline.seasonal_period", "must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::structural("series contains non-finite values"));
    }
    let m = mean(values);
    let var = variance(values);
    if var == 0.0 {
        return Ok([m, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
    let line = linear_fit(values);
    let detrended: Vec<f64> = values.iter().zip(&line).map(|(x, l)| x - l).collect();
    let seasonal = if seasonal_period >= 2 && values.len() >= 2 * seasonal_period {
        seasonal_means(&detrended, seasonal_period)
    } else {
        vec![0.0; values.len()]
    };
    let remainder: Vec<f64> = detrended.iter().zip(&seasonal).map(|(d, s)| d - s).collect();
    let deseasonalized: Vec<f64> = values.iter().zip(&seasonal).map(|(x, s)| x - s).collect();
    let var_r = variance(&remainder);
    Ok([
        m,
        var.sqrt(),
        acf1(values, m, var),
        strength(var_r, variance(&deseasonalized)),
        strength(var_r, variance(&detrended)),
        spectral_entropy(values, m),
    ])
}

/// Per-coordinate z-scores; a coordinate with zero spread becomes zero.
pub fn standardize(features: &[FeatureVector]) -> Vec<FeatureVector> {
    if features.is_empty() {
        return Vec::new();
    }
    let n = features.len() as f64;
    let mut out = features.to_vec();
    for j in 0..6 {
        let m = features.iter().map(|f| f[j]).sum::<f64>() / n;
        let sd = (features.iter().map(|f| (f[j] - m) * (f[j] - m)).sum::<f64>() / n).sqrt();
        for row in &mut out {
            row[j] = if sd > 0.0 { (row[j] - m) / sd } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_conventions() {
        let f = extract_features(&[3.5; 48], 24).unwrap();
        assert_eq!(f, [3.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn alternating_series() {
        let x: Vec<f64> = (0..24).map(|t| (t % 2) as f64).collect();
        let f = extract_features(&x, 2).unwrap();
        assert!((f[0] - 0.5).abs() < 1e-12);
        assert!((f[1] - 0.5).abs() < 1e-12);
        assert!(f[2] < -0.95, "acf1 {}", f[2]);
        assert!(f[4] > 0.99, "seasonal {}", f[4]);
        // all power sits at the Nyquist bin
        assert!(f[5] < 1e-9, "entropy {}", f[5]);
    }

    #[test]
    fn ramp_is_all_trend() {
        let x: Vec<f64> = (0..30).map(|t| 0.1 * t as f64 + 2.0).collect();
        let f = extract_features(&x, 7).unwrap();
        assert!((f[3] - 1.0).abs() < 1e-9, "trend {}", f[3]);
        assert!(f[2] > 0.8);
    }

    #[test]
    fn white_noise_has_high_entropy() {
        let mut rng = crate::rng::SeedTree::new(3).rng();
        let x: Vec<f64> = (0..256).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let f = extract_features(&x, 24).unwrap();
        assert!(f[5] > 0.85, "entropy {}", f[5]);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_series_has_no_seasonality() {
        let x: Vec<f64> = (0..24).map(|t| (t as f64).sin()).collect();
        assert_eq!(extract_features(&x, 24).unwrap()[4], 0.0);
    }

    #[test]
    fn standardized_columns() {
        let feats = vec![[1.0, 2.0, 0.0, 0.0, 0.0, 5.0], [3.0, 2.0, 0.0, 0.0, 0.0, 7.0]];
        let z = standardize(&feats);
        assert_eq!(z[0][0], -1.0);
        assert_eq!(z[1][5], 1.0);
        assert_eq!(z[0][1], 0.0);
    }
}
