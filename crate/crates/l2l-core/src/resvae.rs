//! Residual variational autoencoder over binary leaf skeletons.
//!
//! The encoder maps a skeleton raster to a 32-dimensional Gaussian
//! `(mu, log sigma^2)`; the decoder reconstructs a raster from a latent
//! sample drawn by reparameterization. A stack of stride-1 residual
//! convolution blocks sits at the end of the decoder, and the training loss
//! is squared reconstruction error plus `beta` times the closed-form KL
//! divergence to the standard normal prior.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EntryMap, KIND_RESVAE};
use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::layers::{BatchNorm2d, Dense, LeakyReLU, Sigmoid};
use crate::nn::{ParamSlot, Tensor4, TensorEntry};
use crate::raster::SkeletonMask;
use crate::seed;

pub const LATENT_DIM: usize = 32;
const BOTTLENECK: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VAEConfig {
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_beta")]
    pub beta: f32,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_kernel")]
    pub kernel_size: usize,
    #[serde(default = "d_res_layers")]
    pub residual_layers: usize,
    #[serde(default = "d_res_filters")]
    pub residual_filters: usize,
    #[serde(default = "d_image")]
    pub image_size: usize,
    #[serde(default = "d_base")]
    pub base_filters: usize,
    /// Fall back to an N(0,1) latent prior instead of the fitted one.
    #[serde(default)]
    pub standard_prior: bool,
    #[serde(default)]
    pub seed: u64,
}

fn d_latent() -> usize {
    LATENT_DIM
}
fn d_beta() -> f32 {
    75.0
}
fn d_lr() -> f32 {
    0.001
}
fn d_epochs() -> usize {
    2000
}
fn d_batch() -> usize {
    64
}
fn d_kernel() -> usize {
    4
}
fn d_res_layers() -> usize {
    5
}
fn d_res_filters() -> usize {
    16
}
fn d_image() -> usize {
    256
}
fn d_base() -> usize {
    32
}

impl Default for VAEConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).unwrap()
    }
}

impl VAEConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.latent_dim > 0
            && self.beta >= 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.kernel_size > 0
            && self.residual_layers > 0
            && self.residual_filters > 0
            && self.base_filters > 0;
        if !ok {
            return Err(Error::Config {
                key: "vae".into(),
                message: "counts must be positive and beta >= 0".into(),
            });
        }
        if self.image_size < 2 * BOTTLENECK || !self.image_size.is_power_of_two() {
            return Err(Error::Config {
                key: "vae.image_size".into(),
                message: format!("must be a power of two >= {}", 2 * BOTTLENECK),
            });
        }
        Ok(())
    }

    fn stage_count(&self) -> usize {
        (self.image_size / BOTTLENECK).trailing_zeros() as usize
    }

    fn stage_widths(&self) -> Vec<usize> {
        (0..self.stage_count())
            .map(|i| (self.base_filters << i).min(256))
            .collect()
    }
}

/// Encoder output: per-sample latent mean and log-variance, `(batch, latent)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Array2<f32>,
    pub log_var: Array2<f32>,
}

/// Diagonal Gaussian over the latent space from which new skeletons are
/// sampled.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentPrior {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentPrior {
    pub fn standard(dim: usize) -> Self {
        LatentPrior {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("latent prior std must be strictly positive".into()));
        }
        Ok(())
    }
}

/// `z = mu + exp(log_var / 2) * noise`, elementwise per sample.
pub fn reparameterize(enc: &EncoderOutput, noise: &Array2<f32>) -> Array2<f32> {
    &enc.mu + &(enc.log_var.mapv(|lv| (lv / 2.0).exp()) * noise)
}

/// Closed-form KL divergence of `N(mu, sigma)` from `N(0, 1)`, summed over
/// latent dimensions and averaged over the batch:
/// `1/2 sum_i (mu_i^2 + exp(log_var_i) - 1 - log_var_i)`.
pub fn kl_divergence(enc: &EncoderOutput) -> f32 {
    let n = enc.mu.nrows() as f32;
    let mut total = 0f32;
    for (m, lv) in enc.mu.iter().zip(enc.log_var.iter()) {
        total += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    total / n
}

/// Squared reconstruction error (sum over pixels, mean over batch) plus
/// `beta` times the KL term.
pub fn vae_loss(x: &Tensor4, x_hat: &Tensor4, enc: &EncoderOutput, beta: f32) -> f32 {
    let n = x.dim().0 as f32;
    let recon: f32 = x
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f32>()
        / n;
    recon + beta * kl_divergence(enc)
}

/// Identity-shortcut stack: `out = x + r(x)` where `r` is `layers`
/// convolution (stride 1, size-preserving) -> batch norm -> LeakyReLU
/// blocks of `filters` channels each.
pub struct ResidualBlock {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm2d>,
    acts: Vec<LeakyReLU>,
}

impl ResidualBlock {
    pub fn new(filters: usize, layers: usize, kernel: usize) -> Self {
        ResidualBlock {
            convs: (0..layers).map(|_| Conv2d::same(filters, filters, kernel)).collect(),
            bns: (0..layers).map(|_| BatchNorm2d::new(filters)).collect(),
            acts: (0..layers).map(|_| LeakyReLU::new(0.2)).collect(),
        }
    }

    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        for c in &mut self.convs {
            c.init_he(rng);
        }
    }

    /// Zero the residual branch so the block is exactly the identity.
    pub fn zero_residual(&mut self) {
        for c in &mut self.convs {
            c.w.fill(0.0);
            c.b.fill(0.0);
        }
        for bn in &mut self.bns {
            bn.gamma.fill(1.0);
            bn.beta.fill(0.0);
            bn.running_mean.fill(0.0);
            bn.running_var.fill(1.0);
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut h = x.clone();
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h);
            h = self.bns[i].forward(&h, train);
            h = self.acts[i].forward(&h);
        }
        h + x
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let mut g = gy.clone();
        for i in (0..self.convs.len()).rev() {
            g = self.acts[i].backward(&g);
            g = self.bns[i].backward(&g);
            g = self.convs[i].backward(&g);
        }
        g + gy
    }

    pub fn zero_grad(&mut self) {
        for c in &mut self.convs {
            c.zero_grad();
        }
        for bn in &mut self.bns {
            bn.zero_grad();
        }
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for (c, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            out.extend(c.slots());
            out.extend(bn.slots());
        }
        out
    }

    pub fn entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, (c, bn)) in self.convs.iter().zip(self.bns.iter()).enumerate() {
            out.extend(c.entries(&format!("{prefix}.conv{i}")));
            out.extend(bn.entries(&format!("{prefix}.bn{i}")));
        }
        out
    }

    pub fn load(&mut self, prefix: &str, entries: &mut EntryMap) -> Result<()> {
        for (i, (c, bn)) in self.convs.iter_mut().zip(self.bns.iter_mut()).enumerate() {
            c.load(&format!("{prefix}.conv{i}"), entries)?;
            bn.load(&format!("{prefix}.bn{i}"), entries)?;
        }
        Ok(())
    }
}

/// The full network: strided-convolution encoder to an 8x8 bottleneck,
/// dense heads for `(mu, log_var)`, a mirrored transposed-convolution
/// decoder and the terminal residual stack with a sigmoid output.
pub struct ResVae {
    pub config: VAEConfig,
    enc_convs: Vec<Conv2d>,
    enc_bns: Vec<BatchNorm2d>,
    enc_acts: Vec<LeakyReLU>,
    fc_mu: Dense,
    fc_log_var: Dense,
    fc_z: Dense,
    dec_convs: Vec<ConvTranspose2d>,
    dec_bns: Vec<BatchNorm2d>,
    dec_acts: Vec<LeakyReLU>,
    residual: ResidualBlock,
    out_conv: Conv2d,
    out_act: Sigmoid,
    bottleneck_channels: usize,
}

impl ResVae {
    pub fn new(config: VAEConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.stage_widths();
        let k = config.kernel_size;
        let mut enc_convs = Vec::new();
        let mut in_c = 1;
        for &w in &widths {
            enc_convs.push(Conv2d::down(in_c, w, k));
            in_c = w;
        }
        let last = *widths.last().unwrap();
        let flat = last * BOTTLENECK * BOTTLENECK;
        let mut dec_convs = Vec::new();
        let mut dec_widths: Vec<usize> = widths[..widths.len() - 1].to_vec();
        dec_widths.reverse(); // decoder intermediate widths, high to low
        dec_widths.push(config.residual_filters);
        let mut cur = last;
        for &w in &dec_widths {
            dec_convs.push(ConvTranspose2d::up(cur, w, k));
            cur = w;
        }
        Ok(ResVae {
            enc_bns: widths.iter().map(|&w| BatchNorm2d::new(w)).collect(),
            enc_acts: widths.iter().map(|_| LeakyReLU::new(0.2)).collect(),
            fc_mu: Dense::new(flat, config.latent_dim),
            fc_log_var: Dense::new(flat, config.latent_dim),
            fc_z: Dense::new(config.latent_dim, flat),
            dec_bns: dec_widths.iter().map(|&w| BatchNorm2d::new(w)).collect(),
            dec_acts: dec_widths.iter().map(|_| LeakyReLU::new(0.2)).collect(),
            residual: ResidualBlock::new(config.residual_filters, config.residual_layers, k),
            out_conv: Conv2d::same(config.residual_filters, 1, k),
            out_act: Sigmoid::new(),
            enc_convs,
            dec_convs,
            bottleneck_channels: last,
            config,
        })
    }

    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        for c in &mut self.enc_convs {
            c.init_he(rng);
        }
        self.fc_mu.init_he(rng);
        self.fc_log_var.init_he(rng);
        self.fc_z.init_he(rng);
        for c in &mut self.dec_convs {
            c.init_he(rng);
        }
        self.residual.init_weights(rng);
        self.out_conv.init_he(rng);
    }

    pub fn residual_block_mut(&mut self) -> &mut ResidualBlock {
        &mut self.residual
    }

    pub fn encode_forward(&mut self, x: &Tensor4, train: bool) -> EncoderOutput {
        let mut h = x.clone();
        for i in 0..self.enc_convs.len() {
            h = self.enc_convs[i].forward(&h);
            h = self.enc_bns[i].forward(&h, train);
            h = self.enc_acts[i].forward(&h);
        }
        let n = h.dim().0;
        let flat = h
            .into_shape_with_order((n, self.bottleneck_channels * BOTTLENECK * BOTTLENECK))
            .unwrap();
        EncoderOutput {
            mu: self.fc_mu.forward(&flat),
            log_var: self.fc_log_var.forward(&flat),
        }
    }

    /// Backward through the encoder given gradients on `(mu, log_var)`.
    pub fn encode_backward(&mut self, g_mu: &Array2<f32>, g_log_var: &Array2<f32>) {
        let g_flat = self.fc_mu.backward(g_mu) + self.fc_log_var.backward(g_log_var);
        let n = g_flat.nrows();
        let s = BOTTLENECK;
        let mut g = g_flat
            .into_shape_with_order((n, self.bottleneck_channels, s, s))
            .unwrap();
        for i in (0..self.enc_convs.len()).rev() {
            g = self.enc_acts[i].backward(&g);
            g = self.enc_bns[i].backward(&g);
            g = self.enc_convs[i].backward(&g);
        }
    }

    pub fn decode_forward(&mut self, z: &Array2<f32>, train: bool) -> Tensor4 {
        let n = z.nrows();
        let flat = self.fc_z.forward(z);
        let mut h = flat
            .into_shape_with_order((n, self.bottleneck_channels, BOTTLENECK, BOTTLENECK))
            .unwrap();
        for i in 0..self.dec_convs.len() {
            h = self.dec_convs[i].forward(&h);
            h = self.dec_bns[i].forward(&h, train);
            h = self.dec_acts[i].forward(&h);
        }
        h = self.residual.forward(&h, train);
        h = self.out_conv.forward(&h);
        self.out_act.forward(&h)
    }

    /// Backward through the decoder; returns the gradient on `z`.
    pub fn decode_backward(&mut self, gy: &Tensor4) -> Array2<f32> {
        let mut g = self.out_act.backward(gy);
        g = self.out_conv.backward(&g);
        g = self.residual.backward(&g);
        for i in (0..self.dec_convs.len()).rev() {
            g = self.dec_acts[i].backward(&g);
            g = self.dec_bns[i].backward(&g);
            g = self.dec_convs[i].backward(&g);
        }
        let n = g.dim().0;
        let g_flat = g
            .into_shape_with_order((n, self.bottleneck_channels * BOTTLENECK * BOTTLENECK))
            .unwrap();
        self.fc_z.backward(&g_flat)
    }

    /// Encode a batch of skeleton masks (inference mode).
    pub fn encode(&mut self, masks: &[SkeletonMask]) -> Result<EncoderOutput> {
        let x = self.batch_tensor(masks)?;
        Ok(self.encode_forward(&x, false))
    }

    /// Decode a batch of latents to rasters in `[0, 1]` (inference mode).
    pub fn decode(&mut self, z: &Array2<f32>) -> Result<Tensor4> {
        if z.ncols() != self.config.latent_dim {
            return Err(Error::LatentLengthMismatch {
                expected: self.config.latent_dim,
                got: z.ncols(),
            });
        }
        Ok(self.decode_forward(z, false))
    }

    pub fn batch_tensor(&self, masks: &[SkeletonMask]) -> Result<Tensor4> {
        if masks.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let s = self.config.image_size;
        let mut x = Tensor4::zeros((masks.len(), 1, s, s));
        for (i, m) in masks.iter().enumerate() {
            if m.height() != s || m.width() != s {
                return Err(Error::ShapeMismatch(format!(
                    "mask {} is {}x{}, trained size is {s}x{s}",
                    m.source_id,
                    m.height(),
                    m.width()
                )));
            }
            for ((y, xx), &v) in m.pixels.indexed_iter() {
                x[[i, 0, y, xx]] = v as f32;
            }
        }
        Ok(x)
    }

    pub fn zero_grad(&mut self) {
        for c in &mut self.enc_convs {
            c.zero_grad();
        }
        for bn in &mut self.enc_bns {
            bn.zero_grad();
        }
        self.fc_mu.zero_grad();
        self.fc_log_var.zero_grad();
        self.fc_z.zero_grad();
        for c in &mut self.dec_convs {
            c.zero_grad();
        }
        for bn in &mut self.dec_bns {
            bn.zero_grad();
        }
        self.residual.zero_grad();
        self.out_conv.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for (c, bn) in self.enc_convs.iter_mut().zip(self.enc_bns.iter_mut()) {
            out.extend(c.slots());
            out.extend(bn.slots());
        }
        out.extend(self.fc_mu.slots());
        out.extend(self.fc_log_var.slots());
        out.extend(self.fc_z.slots());
        for (c, bn) in self.dec_convs.iter_mut().zip(self.dec_bns.iter_mut()) {
            out.extend(c.slots());
            out.extend(bn.slots());
        }
        out.extend(self.residual.slots());
        out.extend(self.out_conv.slots());
        out
    }

    pub fn state_dict(&self) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, (c, bn)) in self.enc_convs.iter().zip(self.enc_bns.iter()).enumerate() {
            out.extend(c.entries(&format!("enc{i}.conv")));
            out.extend(bn.entries(&format!("enc{i}.bn")));
        }
        out.extend(self.fc_mu.entries("fc_mu"));
        out.extend(self.fc_log_var.entries("fc_log_var"));
        out.extend(self.fc_z.entries("fc_z"));
        for (i, (c, bn)) in self.dec_convs.iter().zip(self.dec_bns.iter()).enumerate() {
            out.extend(c.entries(&format!("dec{i}.conv")));
            out.extend(bn.entries(&format!("dec{i}.bn")));
        }
        out.extend(self.residual.entries("residual"));
        out.extend(self.out_conv.entries("out_conv"));
        out
    }

    pub fn load_state_dict(&mut self, entries: &[TensorEntry]) -> Result<()> {
        let mut map = EntryMap::new(entries);
        for (i, (c, bn)) in self.enc_convs.iter_mut().zip(self.enc_bns.iter_mut()).enumerate() {
            c.load(&format!("enc{i}.conv"), &mut map)?;
            bn.load(&format!("enc{i}.bn"), &mut map)?;
        }
        self.fc_mu.load("fc_mu", &mut map)?;
        self.fc_log_var.load("fc_log_var", &mut map)?;
        self.fc_z.load("fc_z", &mut map)?;
        for (i, (c, bn)) in self.dec_convs.iter_mut().zip(self.dec_bns.iter_mut()).enumerate() {
            c.load(&format!("dec{i}.conv"), &mut map)?;
            bn.load(&format!("dec{i}.bn"), &mut map)?;
        }
        self.residual.load("residual", &mut map)?;
        self.out_conv.load("out_conv", &mut map)?;
        map.finish()
    }

    pub fn to_checkpoint(&self, history_csv: String) -> Checkpoint {
        let mut ckpt = Checkpoint::new(
            KIND_RESVAE,
            self.config.seed,
            serde_json::to_value(&self.config).unwrap(),
        );
        ckpt.history_csv = history_csv;
        ckpt.tensors = self.state_dict();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ResVae> {
        ckpt.expect_kind(KIND_RESVAE)?;
        let config: VAEConfig = ckpt.config_as()?;
        let mut vae = ResVae::new(config)?;
        vae.load_state_dict(&ckpt.tensors)?;
        Ok(vae)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f32,
    pub recon_loss: f32,
    pub kl_loss: f32,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,total_loss,recon_loss,kl_loss\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.total_loss, r.recon_loss, r.kl_loss));
    }
    s
}

/// Train with Adam over shuffled mini-batches. Deterministic per seed.
/// `on_epoch` observes each finished epoch (progress logging).
pub fn train_resvae(
    dataset: &[SkeletonMask],
    config: &VAEConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let mut vae = ResVae::new(config.clone())?;
    let mut init_rng = seed::rng(config.seed, "resvae-init");
    vae.init_weights(&mut init_rng);
    let x_all = vae.batch_tensor(dataset)?;
    let n = dataset.len();

    let mut opt = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut shuffle_rng = seed::rng(config.seed, "resvae-shuffle");
    let mut noise_rng = seed::rng(config.seed, "resvae-noise");
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut shuffle_rng);
        let mut sums = (0f32, 0f32, 0f32);
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = select_batch(&x_all, chunk);
            vae.zero_grad();
            let enc = vae.encode_forward(&x, true);
            let noise = Array2::from_shape_fn(enc.mu.raw_dim(), |_| {
                <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut noise_rng)
            });
            let z = reparameterize(&enc, &noise);
            let x_hat = vae.decode_forward(&z, true);

            let b = chunk.len() as f32;
            let recon = x
                .iter()
                .zip(x_hat.iter())
                .map(|(a, o)| (a - o) * (a - o))
                .sum::<f32>()
                / b;
            let kl = kl_divergence(&enc);
            let total = recon + config.beta * kl;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    unit: "epoch",
                    index: epoch,
                    value: total,
                });
            }

            let g_xhat = (&x_hat - &x) * (2.0 / b);
            let gz = vae.decode_backward(&g_xhat);
            // d z / d mu = 1, d z / d log_var = noise * exp(lv/2) / 2
            let mut g_mu = gz.clone();
            let mut g_lv = &gz * &(&noise * &enc.log_var.mapv(|lv| (lv / 2.0).exp() * 0.5));
            // KL gradients (batch-mean convention).
            g_mu += &(enc.mu.mapv(|m| config.beta * m / b));
            g_lv += &(enc.log_var.mapv(|lv| config.beta * 0.5 * (lv.exp() - 1.0) / b));
            vae.encode_backward(&g_mu, &g_lv);

            opt.step(&mut vae.slots());
            sums.0 += total;
            sums.1 += recon;
            sums.2 += kl;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            total_loss: sums.0 / batches as f32,
            recon_loss: sums.1 / batches as f32,
            kl_loss: sums.2 / batches as f32,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(vae.to_checkpoint(history_to_csv(&history)))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

fn select_batch(x_all: &Tensor4, idx: &[usize]) -> Tensor4 {
    let (_, c, h, w) = x_all.dim();
    let mut out = Tensor4::zeros((idx.len(), c, h, w));
    for (i, &j) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&x_all.index_axis(Axis(0), j));
    }
    out
}

/// Componentwise mean and population standard deviation of the training
/// set's latent means, floored at 1e-6.
pub fn fit_latent_prior(vae: &mut ResVae, dataset: &[SkeletonMask]) -> Result<LatentPrior> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if vae.config.standard_prior {
        return Ok(LatentPrior::standard(vae.config.latent_dim));
    }
    let enc = vae.encode(dataset)?;
    let n = enc.mu.nrows() as f32;
    let mean: Array1<f32> = enc.mu.sum_axis(Axis(0)) / n;
    let mut var = Array1::<f32>::zeros(enc.mu.ncols());
    for row in enc.mu.axis_iter(Axis(0)) {
        for (v, (&m, &x)) in var.iter_mut().zip(mean.iter().zip(row.iter())) {
            *v += (x - m) * (x - m);
        }
    }
    var /= n;
    Ok(LatentPrior {
        mean: mean.to_vec(),
        std: var.mapv(|v| v.sqrt().max(1e-6)).to_vec(),
    })
}

/// Draw `z ~ N(prior.mean, prior.std^2)`, decode and binarize at `threshold`.
pub fn sample_skeleton(
    vae: &mut ResVae,
    prior: &LatentPrior,
    rng: &mut ChaCha8Rng,
    threshold: f32,
) -> Result<(SkeletonMask, Vec<f32>)> {
    assert!(threshold > 0.0 && threshold < 1.0);
    prior.validate()?;
    let dim = vae.config.latent_dim;
    if prior.mean.len() != dim {
        return Err(Error::LatentLengthMismatch {
            expected: dim,
            got: prior.mean.len(),
        });
    }
    let z: Vec<f32> = (0..dim)
        .map(|i| {
            let n: f32 = <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng);
            prior.mean[i] + prior.std[i] * n
        })
        .collect();
    let z_arr = Array2::from_shape_vec((1, dim), z.clone()).unwrap();
    let raster = vae.decode(&z_arr)?;
    let s = vae.config.image_size;
    let mut px = ndarray::Array2::<u8>::zeros((s, s));
    for y in 0..s {
        for x in 0..s {
            px[[y, x]] = (raster[[0, 0, y, x]] >= threshold) as u8;
        }
    }
    Ok((SkeletonMask::new(px, "sampled"), z))
}
