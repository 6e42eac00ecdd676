//! ClusterGAN: generator, encoder and discriminator over a latent space made
//! of Gaussian noise concatenated with a one-hot cluster block.
//!
//! The encoder's cluster block, passed through softmax, is what assigns a
//! series to a cluster after training.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesSample;
use crate::error::{Error, Result};
use crate::nn::{
    self, cross_entropy_grad, cross_entropy_loss, softmax, softmax_backward, softplus, Activation,
    Arch, Gradients, OptimizerConfig, OptimizerState, ParamSet,
};
use crate::ClusterId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    /// `q = log` with the non-saturating generator objective.
    Vanilla,
    /// `q(x) = x` plus discriminator weight clipping.
    Wasserstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    /// Number of clusters (size of the one-hot block).
    pub k: usize,
    pub noise_dim: usize,
    pub sigma: f64,
    pub beta_n: f64,
    pub beta_c: f64,
    pub quality: Quality,
    /// Discriminator clip bound in Wasserstein mode.
    pub clip: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            k: 2,
            noise_dim: 30,
            sigma: 0.1,
            beta_n: 10.0,
            beta_c: 10.0,
            quality: Quality::Vanilla,
            clip: 0.01,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config(format!("{field}.k"), "must be at least 1"));
        }
        if self.noise_dim == 0 {
            return Err(Error::config(format!("{field}.noise_dim"), "must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("{field}.sigma"), "must be positive"));
        }
        if !(self.beta_n >= 0.0 && self.beta_c >= 0.0) {
            return Err(Error::config(format!("{field}.beta_n/beta_c"), "must be non-negative"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config(format!("{field}.clip"), "must be positive"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.noise_dim + self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub noise: Vec<f64>,
    /// Zero-based index of the hot entry.
    pub cluster: usize,
    pub k: usize,
}

impl LatentCode {
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.cluster] = 1.0;
        v
    }

    /// `(z_n, z_c)` concatenated, the generator input.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.noise.clone();
        v.extend(self.one_hot());
        v
    }
}

pub fn sample_latent<R: Rng + ?Sized>(cfg: &LatentConfig, rng: &mut R) -> LatentCode {
    let normal = Normal::new(0.0, cfg.sigma).expect("sigma validated positive");
    let noise = (0..cfg.noise_dim).map(|_| normal.sample(rng)).collect();
    LatentCode {
        noise,
        cluster: rng.random_range(0..cfg.k),
        k: cfg.k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTriple {
    pub generator: ParamSet,
    pub encoder: ParamSet,
    pub discriminator: ParamSet,
}

impl GanTriple {
    pub fn architectures(
        cfg: &LatentConfig,
        sample_len: usize,
        hidden: &[usize],
        activation: Activation,
    ) -> Result<(Arch, Arch, Arch)> {
        let z = cfg.latent_dim();
        Ok((
            Arch::mlp(z, hidden, sample_len, activation, Activation::Sigmoid)?,
            Arch::mlp(sample_len, hidden, z, activation, Activation::Linear)?,
            Arch::mlp(sample_len, hidden, 1, activation, Activation::Linear)?,
        ))
    }

    pub fn init<R: Rng + ?Sized>(
        cfg: &LatentConfig,
        sample_len: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let (g, e, d) = Self::architectures(cfg, sample_len, hidden, activation)?;
        Ok(GanTriple {
            generator: ParamSet::init(g, rng),
            encoder: ParamSet::init(e, rng),
            discriminator: ParamSet::init(d, rng),
        })
    }

    pub fn validate(&self, cfg: &LatentConfig) -> Result<()> {
        let z = cfg.latent_dim();
        let g = self.generator.arch();
        let e = self.encoder.arch();
        let d = self.discriminator.arch();
        if g.input_width() != z || e.output_width() != z {
            return Err(Error::structural(format!(
                "generator input {} / encoder output {} must equal latent width {z}",
                g.input_width(),
                e.output_width()
            )));
        }
        if d.output_width() != 1 {
            return Err(Error::structural("discriminator must emit one value"));
        }
        if g.output_width() != e.input_width() || g.output_width() != d.input_width() {
            return Err(Error::structural("generator output, encoder and discriminator inputs differ"));
        }
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.generator.arch().output_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_e_loss: f64,
    pub recon_n: f64,
    pub recon_c: f64,
}

impl GanLosses {
    fn is_finite(&self) -> bool {
        self.d_loss.is_finite()
            && self.g_e_loss.is_finite()
            && self.recon_n.is_finite()
            && self.recon_c.is_finite()
    }
}

/// Discriminator objective contribution and its derivative for one logit.
fn d_real_term(q: Quality, s: f64) -> (f64, f64) {
    match q {
        Quality::Vanilla => (softplus(-s), -nn::sigmoid(-s)),
        Quality::Wasserstein => (-s, -1.0),
    }
}

fn d_fake_term(q: Quality, s: f64) -> (f64, f64) {
    match q {
        Quality::Vanilla => (softplus(s), nn::sigmoid(s)),
        Quality::Wasserstein => (s, 1.0),
    }
}

/// Generator-side adversarial term for one fake logit.
fn g_adv_term(q: Quality, s: f64) -> (f64, f64) {
    match q {
        Quality::Vanilla => (softplus(-s), -nn::sigmoid(-s)),
        Quality::Wasserstein => (-s, -1.0),
    }
}

fn check_batch(triple: &GanTriple, real: &[&[f64]], latents: &[LatentCode], cfg: &LatentConfig) -> Result<()> {
    triple.validate(cfg)?;
    if real.is_empty() || latents.is_empty() {
        return Err(Error::structural("GAN batches must be non-empty"));
    }
    let len = triple.sample_len();
    if let Some(bad) = real.iter().find(|x| x.len() != len) {
        return Err(Error::structural(format!(
            "real sample of length {} but generator emits {len}",
            bad.len()
        )));
    }
    if latents
        .iter()
        .any(|z| z.noise.len() != cfg.noise_dim || z.k != cfg.k || z.cluster >= cfg.k)
    {
        return Err(Error::structural("latent code does not match the latent config"));
    }
    Ok(())
}

/// All four terms of the joint objective on fixed batches.
///
/// `d_loss` is minimized by the discriminator, `g_e_loss` by generator and
/// encoder together:
/// `g_e_loss = adversarial + beta_n * recon_n + beta_c * recon_c`.
pub fn clustergan_losses(
    triple: &GanTriple,
    real: &[&[f64]],
    latents: &[LatentCode],
    cfg: &LatentConfig,
) -> Result<GanLosses> {
    check_batch(triple, real, latents, cfg)?;
    let q = cfg.quality;
    let mut d_real = 0.0;
    for x in real {
        d_real += d_real_term(q, nn::forward(&triple.discriminator, x)?[0]).0;
    }
    let (mut d_fake, mut g_adv, mut recon_n, mut recon_c) = (0.0, 0.0, 0.0, 0.0);
    for z in latents {
        let x = nn::forward(&triple.generator, &z.to_vec())?;
        let s = nn::forward(&triple.discriminator, &x)?[0];
        d_fake += d_fake_term(q, s).0;
        g_adv += g_adv_term(q, s).0;
        let e = nn::forward(&triple.encoder, &x)?;
        let (e_n, e_c) = e.split_at(cfg.noise_dim);
        recon_n += e_n
            .iter()
            .zip(&z.noise)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        recon_c += cross_entropy_loss(&softmax(e_c), &z.one_hot())?;
    }
    let (mr, mf) = (real.len() as f64, latents.len() as f64);
    let recon_n = recon_n / mf;
    let recon_c = recon_c / mf;
    Ok(GanLosses {
        d_loss: d_real / mr + d_fake / mf,
        g_e_loss: g_adv / mf + cfg.beta_n * recon_n + cfg.beta_c * recon_c,
        recon_n,
        recon_c,
    })
}

/// Gradient of `d_loss` with respect to the discriminator.
pub fn discriminator_gradients(
    triple: &GanTriple,
    real: &[&[f64]],
    latents: &[LatentCode],
    cfg: &LatentConfig,
) -> Result<(f64, Gradients)> {
    check_batch(triple, real, latents, cfg)?;
    let q = cfg.quality;
    let d = &triple.discriminator;
    let mut grads = Gradients::zeros_like(d);
    let (mr, mf) = (real.len() as f64, latents.len() as f64);
    let mut loss = 0.0;
    for x in real {
        let (out, trace) = nn::forward_trace(d, x)?;
        let (value, slope) = d_real_term(q, out[0]);
        loss += value / mr;
        nn::backward_trace(d, &trace, &[slope / mr], &mut grads)?;
    }
    for z in latents {
        let x = nn::forward(&triple.generator, &z.to_vec())?;
        let (out, trace) = nn::forward_trace(d, &x)?;
        let (value, slope) = d_fake_term(q, out[0]);
        loss += value / mf;
        nn::backward_trace(d, &trace, &[slope / mf], &mut grads)?;
    }
    Ok((loss, grads))
}

/// Gradients of `g_e_loss` with respect to generator and encoder.
pub fn generator_encoder_gradients(
    triple: &GanTriple,
    latents: &[LatentCode],
    cfg: &LatentConfig,
) -> Result<(GanLosses, Gradients, Gradients)> {
    if latents.is_empty() {
        return Err(Error::structural("GAN batches must be non-empty"));
    }
    triple.validate(cfg)?;
    let q = cfg.quality;
    let (g, e, d) = (&triple.generator, &triple.encoder, &triple.discriminator);
    let mut g_grads = Gradients::zeros_like(g);
    let mut e_grads = Gradients::zeros_like(e);
    let mut d_scratch = Gradients::zeros_like(d);
    let mf = latents.len() as f64;
    let mut losses = GanLosses::default();
    for z in latents {
        if z.noise.len() != cfg.noise_dim || z.k != cfg.k || z.cluster >= cfg.k {
            return Err(Error::structural("latent code does not match the latent config"));
        }
        let (x, g_trace) = nn::forward_trace(g, &z.to_vec())?;

        let (s, d_trace) = nn::forward_trace(d, &x)?;
        let (adv, adv_slope) = g_adv_term(q, s[0]);
        let mut dx = nn::backward_trace(d, &d_trace, &[adv_slope / mf], &mut d_scratch)?;

        let (enc, e_trace) = nn::forward_trace(e, &x)?;
        let (e_n, e_c) = enc.split_at(cfg.noise_dim);
        let mut upstream = Vec::with_capacity(enc.len());
        let mut rn = 0.0;
        for (a, b) in e_n.iter().zip(&z.noise) {
            rn += (a - b) * (a - b);
            upstream.push(cfg.beta_n * 2.0 * (a - b) / mf);
        }
        let probs = softmax(e_c);
        let target = z.one_hot();
        let rc = cross_entropy_loss(&probs, &target)?;
        let dc = softmax_backward(&probs, &cross_entropy_grad(&probs, &target));
        upstream.extend(dc.iter().map(|v| cfg.beta_c * v / mf));
        let dx_e = nn::backward_trace(e, &e_trace, &upstream, &mut e_grads)?;
        for (a, b) in dx.iter_mut().zip(&dx_e) {
            *a += b;
        }
        nn::backward_trace(g, &g_trace, &dx, &mut g_grads)?;

        losses.recon_n += rn / mf;
        losses.recon_c += rc / mf;
        losses.g_e_loss += adv / mf;
    }
    losses.g_e_loss += cfg.beta_n * losses.recon_n + cfg.beta_c * losses.recon_c;
    Ok((losses, g_grads, e_grads))
}

/// One optimizer per model.
#[derive(Debug, Clone)]
pub struct GanOptimizers {
    pub generator: OptimizerState,
    pub encoder: OptimizerState,
    pub discriminator: OptimizerState,
}

impl GanOptimizers {
    pub fn new(config: OptimizerConfig, triple: &GanTriple) -> Self {
        GanOptimizers {
            generator: OptimizerState::new(config, triple.generator.len()),
            encoder: OptimizerState::new(config, triple.encoder.len()),
            discriminator: OptimizerState::new(config, triple.discriminator.len()),
        }
    }
}

/// One alternating update on explicit batches: a discriminator step on
/// `d_latents`, then a joint generator+encoder step on `ge_latents`.
pub fn gan_step_with(
    triple: &mut GanTriple,
    real: &[&[f64]],
    d_latents: &[LatentCode],
    ge_latents: &[LatentCode],
    cfg: &LatentConfig,
    opts: &mut GanOptimizers,
) -> Result<GanLosses> {
    let (d_loss, d_grads) = discriminator_gradients(triple, real, d_latents, cfg)?;
    if !d_loss.is_finite() {
        return Err(Error::Numeric {
            index: 0,
            message: "discriminator loss is not finite".into(),
        });
    }
    opts.discriminator.step(&mut triple.discriminator, &d_grads)?;
    if cfg.quality == Quality::Wasserstein {
        let c = cfg.clip;
        triple
            .discriminator
            .values_mut()
            .iter_mut()
            .for_each(|w| *w = w.clamp(-c, c));
    }
    let (mut losses, g_grads, e_grads) = generator_encoder_gradients(triple, ge_latents, cfg)?;
    losses.d_loss = d_loss;
    if !losses.is_finite() {
        return Err(Error::Numeric {
            index: 0,
            message: "generator/encoder loss is not finite".into(),
        });
    }
    opts.generator.step(&mut triple.generator, &g_grads)?;
    opts.encoder.step(&mut triple.encoder, &e_grads)?;
    Ok(losses)
}

/// One local update on a client's data: a minibatch of up to `batch_size`
/// samples and fresh latent draws for each sub-step.
pub fn local_gan_step<R: Rng + ?Sized>(
    triple: &mut GanTriple,
    data: &[TimeSeriesSample],
    cfg: &LatentConfig,
    batch_size: usize,
    opts: &mut GanOptimizers,
    rng: &mut R,
) -> Result<GanLosses> {
    if data.is_empty() {
        return Err(Error::structural("local GAN step needs data"));
    }
    let m = batch_size.clamp(1, data.len());
    let picked = index::sample(rng, data.len(), m);
    let mut order: Vec<usize> = picked.into_iter().collect();
    order.sort_unstable();
    let real: Vec<&[f64]> = order.iter().map(|&i| data[i].values.as_slice()).collect();
    let d_latents: Vec<LatentCode> = (0..m).map(|_| sample_latent(cfg, rng)).collect();
    let ge_latents: Vec<LatentCode> = (0..m).map(|_| sample_latent(cfg, rng)).collect();
    gan_step_with(triple, &real, &d_latents, &ge_latents, cfg, opts)
}

/// Softmax over the encoder's cluster block.
pub fn cluster_probabilities(encoder: &ParamSet, values: &[f64], cfg: &LatentConfig) -> Result<Vec<f64>> {
    let out = nn::forward(encoder, values)?;
    if out.len() != cfg.latent_dim() {
        return Err(Error::structural("encoder output does not match latent width"));
    }
    Ok(softmax(&out[cfg.noise_dim..]))
}

/// Argmax of the encoder's cluster block as a 1-based id; ties go to the
/// smallest id.
pub fn infer_cluster(encoder: &ParamSet, values: &[f64], cfg: &LatentConfig) -> Result<ClusterId> {
    let out = nn::forward(encoder, values)?;
    if out.len() != cfg.latent_dim() {
        return Err(Error::structural("encoder output does not match latent width"));
    }
    Ok(argmax_first(&out[cfg.noise_dim..]) as ClusterId + 1)
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
