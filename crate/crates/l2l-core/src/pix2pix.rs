//! Conditional adversarial skeleton-to-leaf translator.
//!
//! A U-Net generator maps a 1-channel skeleton raster to a 3-channel leaf
//! image; a patch discriminator scores overlapping receptive fields of the
//! (skeleton, image) pair as real or generated. Training alternates one
//! discriminator update and one generator update per step; the generator
//! objective is the non-saturating adversarial term plus `lambda_l1` times
//! the mean absolute error against the paired target.

use ndarray::{concatenate, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EntryMap, KIND_PIX2PIX};
use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::layers::{BatchNorm2d, Dropout, LeakyReLU, Sigmoid, Tanh};
use crate::nn::{ParamSlot, Tensor4, TensorEntry};
use crate::raster::{ColorMode, PairedSample, SkeletonMask, SpectralImage};
use crate::seed;

const BCE_EPS: f32 = 1e-7;
const OUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TranslatorConfig {
    #[serde(default = "d_lambda")]
    pub lambda_l1: f32,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_init")]
    pub init_std: f32,
    #[serde(default = "d_kernel")]
    pub kernel_size: usize,
    #[serde(default = "d_image")]
    pub image_size: usize,
    #[serde(default = "d_base")]
    pub base_filters: usize,
    #[serde(default = "d_dropout")]
    pub dropout_rate: f32,
    #[serde(default = "d_mode")]
    pub mode: ColorMode,
    #[serde(default)]
    pub seed: u64,
}

fn d_lambda() -> f32 {
    100.0
}
fn d_lr() -> f32 {
    0.0002
}
fn d_steps() -> usize {
    12000
}
fn d_batch() -> usize {
    1
}
fn d_init() -> f32 {
    0.002
}
fn d_kernel() -> usize {
    4
}
fn d_image() -> usize {
    256
}
fn d_base() -> usize {
    64
}
fn d_dropout() -> f32 {
    0.5
}
fn d_mode() -> ColorMode {
    ColorMode::Rgb
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).unwrap()
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_l1 >= 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.kernel_size > 0
            && self.base_filters > 0
            && self.init_std > 0.0
            && (0.0..1.0).contains(&self.dropout_rate);
        if !ok {
            return Err(Error::Config {
                key: "translator".into(),
                message: "rates must be positive, lambda >= 0, dropout in [0, 1)".into(),
            });
        }
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(Error::Config {
                key: "translator.image_size".into(),
                message: "must be a power of two >= 32".into(),
            });
        }
        Ok(())
    }
}

/// Stack `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("channel concat shape mismatch")
}

/// Inverse of `concat_channels`: split after the first `c1` channels.
pub fn split_channels(x: &Tensor4, c1: usize) -> (Tensor4, Tensor4) {
    let (a, b) = x.view().split_at(Axis(1), c1);
    (a.to_owned(), b.to_owned())
}

/// Mean binary cross-entropy of a probability grid against a constant
/// target, with probabilities clamped away from 0 and 1.
pub fn bce_loss(pred: &Tensor4, target: f32) -> f32 {
    let n = pred.len() as f32;
    pred.iter()
        .map(|&p| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
        })
        .sum::<f32>()
        / n
}

/// Gradient of `bce_loss` with respect to the probability grid.
pub fn bce_grad(pred: &Tensor4, target: f32) -> Tensor4 {
    let n = pred.len() as f32;
    pred.mapv(|p| {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        (-(target / p) + (1.0 - target) / (1.0 - p)) / n
    })
}

/// Mean absolute error over all elements.
pub fn l1_loss(a: &Tensor4, b: &Tensor4) -> f32 {
    let n = a.len() as f32;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f32>() / n
}

/// Gradient of `l1_loss` with respect to `a`.
pub fn l1_grad(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    let n = a.len() as f32;
    let mut g = Tensor4::zeros(a.raw_dim());
    for ((ga, &x), &y) in g.iter_mut().zip(a.iter()).zip(b.iter()) {
        let d = x - y;
        // Subgradient 0 at ties; f32::signum(0.0) would give 1.
        *ga = if d == 0.0 { 0.0 } else { d.signum() / n };
    }
    g
}

/// Discriminator objective: real pairs toward 1, generated pairs toward 0.
pub fn discriminator_loss(pred_real: &Tensor4, pred_fake: &Tensor4) -> f32 {
    bce_loss(pred_real, 1.0) + bce_loss(pred_fake, 0.0)
}

/// Non-saturating adversarial term for the generator.
pub fn generator_adversarial_loss(pred_fake: &Tensor4) -> f32 {
    bce_loss(pred_fake, 1.0)
}

/// Full generator objective.
pub fn generator_loss(pred_fake: &Tensor4, fake: &Tensor4, target: &Tensor4, lambda_l1: f32) -> f32 {
    generator_adversarial_loss(pred_fake) + lambda_l1 * l1_loss(fake, target)
}

struct EncStage {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: LeakyReLU,
}

struct DecStage {
    conv: ConvTranspose2d,
    bn: BatchNorm2d,
    act: LeakyReLU,
    dropout: Option<Dropout>,
}

/// Encoder-decoder with skip connections from every encoder stage to the
/// mirrored decoder stage. The bottleneck is 1x1, so the latent path carries
/// only global structure and the skips carry the skeleton geometry.
pub struct UNetGenerator {
    enc: Vec<EncStage>,
    dec: Vec<DecStage>,
    out_conv: ConvTranspose2d,
    out_act: Tanh,
    skips: Vec<Tensor4>,
}

impl UNetGenerator {
    pub fn new(config: &TranslatorConfig) -> Self {
        let depth = config.image_size.trailing_zeros() as usize;
        let k = config.kernel_size;
        let base = config.base_filters;
        let cap = base * 8;
        let width = |i: usize| (base << i.min(31)).min(cap);

        let mut enc = Vec::with_capacity(depth);
        let mut in_c = 1;
        for i in 0..depth {
            let w = width(i);
            enc.push(EncStage {
                conv: Conv2d::down(in_c, w, k),
                // No norm on the raw input stage or at the 1x1 bottleneck.
                bn: (i > 0 && i < depth - 1).then(|| BatchNorm2d::new(w)),
                act: LeakyReLU::new(0.2),
            });
            in_c = w;
        }
        let mut dec = Vec::with_capacity(depth - 1);
        let mut cur = width(depth - 1);
        for j in 0..depth - 1 {
            let w = width(depth - 2 - j);
            dec.push(DecStage {
                conv: ConvTranspose2d::up(cur, w, k),
                bn: BatchNorm2d::new(w),
                act: LeakyReLU::new(0.0),
                dropout: (j < 3).then(|| Dropout::new(config.dropout_rate)),
            });
            cur = 2 * w; // skip concatenation doubles the width
        }
        UNetGenerator {
            enc,
            dec,
            out_conv: ConvTranspose2d::up(cur, OUT_CHANNELS, k),
            out_act: Tanh::new(),
            skips: Vec::new(),
        }
    }

    pub fn init_weights(&mut self, std: f32, rng: &mut impl Rng) {
        for s in &mut self.enc {
            s.conv.init_normal(std, rng);
        }
        for s in &mut self.dec {
            s.conv.init_normal(std, rng);
        }
        self.out_conv.init_normal(std, rng);
    }

    /// Forward pass; output in `[0, 1]`. `dropout_active` injects the
    /// stochastic decoder noise (always on during training; optional at
    /// inference).
    pub fn forward(
        &mut self,
        x: &Tensor4,
        train: bool,
        dropout_active: bool,
        rng: &mut ChaCha8Rng,
    ) -> Tensor4 {
        self.skips.clear();
        let mut h = x.clone();
        for s in &mut self.enc {
            h = s.conv.forward(&h);
            if let Some(bn) = &mut s.bn {
                h = bn.forward(&h, train);
            }
            h = s.act.forward(&h);
            self.skips.push(h.clone());
        }
        let depth = self.enc.len();
        for (j, s) in self.dec.iter_mut().enumerate() {
            h = s.conv.forward(&h);
            h = s.bn.forward(&h, train);
            h = s.act.forward(&h);
            if let Some(d) = &mut s.dropout {
                h = d.forward(&h, rng, dropout_active);
            }
            h = concat_channels(&h, &self.skips[depth - 2 - j]);
        }
        h = self.out_conv.forward(&h);
        let t = self.out_act.forward(&h);
        t.mapv(|v| 0.5 * (v + 1.0))
    }

    /// Backward pass from the gradient on the `[0, 1]` output; returns the
    /// gradient on the input raster.
    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let depth = self.enc.len();
        let mut g = self.out_act.backward(&gy.mapv(|v| 0.5 * v));
        g = self.out_conv.backward(&g);
        let mut skip_grads: Vec<Option<Tensor4>> = vec![None; depth];
        for (j, s) in self.dec.iter_mut().enumerate().rev() {
            let up_width = self.skips[depth - 2 - j].dim().1;
            let (mut gu, gs) = split_channels(&g, up_width);
            add_grad(&mut skip_grads[depth - 2 - j], gs);
            if let Some(d) = &mut s.dropout {
                gu = d.backward(&gu);
            }
            gu = s.act.backward(&gu);
            gu = s.bn.backward(&gu);
            g = s.conv.backward(&gu);
        }
        add_grad(&mut skip_grads[depth - 1], g);
        let mut g = skip_grads[depth - 1].take().unwrap();
        for (i, s) in self.enc.iter_mut().enumerate().rev() {
            g = s.act.backward(&g);
            if let Some(bn) = &mut s.bn {
                g = bn.backward(&g);
            }
            g = s.conv.backward(&g);
            if i > 0 {
                // g is now the gradient on stage i-1's output; fold in the
                // decoder's skip-connection contribution to that output.
                if let Some(extra) = skip_grads[i - 1].take() {
                    g += &extra;
                }
            }
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.enc {
            s.conv.zero_grad();
            if let Some(bn) = &mut s.bn {
                bn.zero_grad();
            }
        }
        for s in &mut self.dec {
            s.conv.zero_grad();
            s.bn.zero_grad();
        }
        self.out_conv.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for s in &mut self.enc {
            out.extend(s.conv.slots());
            if let Some(bn) = &mut s.bn {
                out.extend(bn.slots());
            }
        }
        for s in &mut self.dec {
            out.extend(s.conv.slots());
            out.extend(s.bn.slots());
        }
        out.extend(self.out_conv.slots());
        out
    }

    pub fn entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, s) in self.enc.iter().enumerate() {
            out.extend(s.conv.entries(&format!("{prefix}.enc{i}.conv")));
            if let Some(bn) = &s.bn {
                out.extend(bn.entries(&format!("{prefix}.enc{i}.bn")));
            }
        }
        for (j, s) in self.dec.iter().enumerate() {
            out.extend(s.conv.entries(&format!("{prefix}.dec{j}.conv")));
            out.extend(s.bn.entries(&format!("{prefix}.dec{j}.bn")));
        }
        out.extend(self.out_conv.entries(&format!("{prefix}.out_conv")));
        out
    }

    pub fn load(&mut self, prefix: &str, map: &mut EntryMap) -> Result<()> {
        for (i, s) in self.enc.iter_mut().enumerate() {
            s.conv.load(&format!("{prefix}.enc{i}.conv"), map)?;
            if let Some(bn) = &mut s.bn {
                bn.load(&format!("{prefix}.enc{i}.bn"), map)?;
            }
        }
        for (j, s) in self.dec.iter_mut().enumerate() {
            s.conv.load(&format!("{prefix}.dec{j}.conv"), map)?;
            s.bn.load(&format!("{prefix}.dec{j}.bn"), map)?;
        }
        self.out_conv.load(&format!("{prefix}.out_conv"), map)
    }
}

fn add_grad(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Patch discriminator over the concatenated (skeleton, image) pair: three
/// stride-2 and two stride-1 4x4 convolution layers ending in a sigmoid
/// probability grid, one cell per overlapping receptive field.
pub struct PatchDiscriminator {
    stages: Vec<EncStage>,
    final_conv: Conv2d,
    final_act: Sigmoid,
}

impl PatchDiscriminator {
    pub const IN_CHANNELS: usize = 1 + OUT_CHANNELS;

    pub fn new(config: &TranslatorConfig) -> Self {
        let k = config.kernel_size;
        let b = config.base_filters;
        let widths = [b, 2 * b, 4 * b];
        let mut stages = Vec::new();
        let mut in_c = Self::IN_CHANNELS;
        for (i, &w) in widths.iter().enumerate() {
            stages.push(EncStage {
                conv: Conv2d::down(in_c, w, k),
                bn: (i > 0).then(|| BatchNorm2d::new(w)),
                act: LeakyReLU::new(0.2),
            });
            in_c = w;
        }
        // First stride-1 layer.
        let w4 = 8 * b;
        stages.push(EncStage {
            conv: Conv2d::new(in_c, w4, k, 1, 1, 1),
            bn: Some(BatchNorm2d::new(w4)),
            act: LeakyReLU::new(0.2),
        });
        PatchDiscriminator {
            stages,
            final_conv: Conv2d::new(w4, 1, k, 1, 1, 1),
            final_act: Sigmoid::new(),
        }
    }

    /// Side length of the probability grid for a given input size.
    pub fn prediction_size(image_size: usize) -> usize {
        image_size / 8 - 2
    }

    pub fn init_weights(&mut self, std: f32, rng: &mut impl Rng) {
        for s in &mut self.stages {
            s.conv.init_normal(std, rng);
        }
        self.final_conv.init_normal(std, rng);
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.conv.forward(&h);
            if let Some(bn) = &mut s.bn {
                h = bn.forward(&h, train);
            }
            h = s.act.forward(&h);
        }
        h = self.final_conv.forward(&h);
        self.final_act.forward(&h)
    }

    /// Backward from the gradient on the probability grid; returns the
    /// gradient on the input pair.
    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let mut g = self.final_act.backward(gy);
        g = self.final_conv.backward(&g);
        for s in self.stages.iter_mut().rev() {
            g = s.act.backward(&g);
            if let Some(bn) = &mut s.bn {
                g = bn.backward(&g);
            }
            g = s.conv.backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.stages {
            s.conv.zero_grad();
            if let Some(bn) = &mut s.bn {
                bn.zero_grad();
            }
        }
        self.final_conv.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.conv.slots());
            if let Some(bn) = &mut s.bn {
                out.extend(bn.slots());
            }
        }
        out.extend(self.final_conv.slots());
        out
    }

    pub fn entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.extend(s.conv.entries(&format!("{prefix}.s{i}.conv")));
            if let Some(bn) = &s.bn {
                out.extend(bn.entries(&format!("{prefix}.s{i}.bn")));
            }
        }
        out.extend(self.final_conv.entries(&format!("{prefix}.final")));
        out
    }

    pub fn load(&mut self, prefix: &str, map: &mut EntryMap) -> Result<()> {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.conv.load(&format!("{prefix}.s{i}.conv"), map)?;
            if let Some(bn) = &mut s.bn {
                bn.load(&format!("{prefix}.s{i}.bn"), map)?;
            }
        }
        self.final_conv.load(&format!("{prefix}.final"), map)
    }
}

/// Generator + discriminator pair with their shared configuration.
pub struct Pix2Pix {
    pub config: TranslatorConfig,
    pub generator: UNetGenerator,
    pub discriminator: PatchDiscriminator,
}

impl Pix2Pix {
    pub fn new(config: TranslatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pix2Pix {
            generator: UNetGenerator::new(&config),
            discriminator: PatchDiscriminator::new(&config),
            config,
        })
    }

    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        let std = self.config.init_std;
        self.generator.init_weights(std, rng);
        self.discriminator.init_weights(std, rng);
    }

    pub fn state_dict(&self) -> Vec<TensorEntry> {
        let mut out = self.generator.entries("gen");
        out.extend(self.discriminator.entries("disc"));
        out
    }

    pub fn load_state_dict(&mut self, entries: &[TensorEntry]) -> Result<()> {
        let mut map = EntryMap::new(entries);
        self.generator.load("gen", &mut map)?;
        self.discriminator.load("disc", &mut map)?;
        map.finish()
    }

    pub fn to_checkpoint(&self, history_csv: String) -> Checkpoint {
        let mut ckpt = Checkpoint::new(
            KIND_PIX2PIX,
            self.config.seed,
            serde_json::to_value(&self.config).unwrap(),
        );
        ckpt.history_csv = history_csv;
        ckpt.tensors = self.state_dict();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Pix2Pix> {
        ckpt.expect_kind(KIND_PIX2PIX)?;
        let config: TranslatorConfig = ckpt.config_as()?;
        let mut p = Pix2Pix::new(config)?;
        p.load_state_dict(&ckpt.tensors)?;
        Ok(p)
    }
}

/// Per-step training record.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    pub d_loss: f32,
    pub g_adv_loss: f32,
    pub g_l1_loss: f32,
}

pub fn history_to_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("step,d_loss,g_adv_loss,g_l1_loss\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.d_loss, r.g_adv_loss, r.g_l1_loss));
    }
    s
}

fn batch_tensors(dataset: &[PairedSample], config: &TranslatorConfig) -> Result<(Tensor4, Tensor4)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = config.image_size;
    let n = dataset.len();
    let mut skel = Tensor4::zeros((n, 1, s, s));
    let mut targ = Tensor4::zeros((n, OUT_CHANNELS, s, s));
    for (i, sample) in dataset.iter().enumerate() {
        if sample.skeleton.height() != s || sample.skeleton.width() != s {
            return Err(Error::ShapeMismatch(format!(
                "sample {} is {}x{}, configured size is {s}x{s}",
                sample.skeleton.source_id,
                sample.skeleton.height(),
                sample.skeleton.width()
            )));
        }
        if sample.mode != config.mode {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has color mode {:?}, configured mode is {:?}",
                sample.skeleton.source_id, sample.mode, config.mode
            )));
        }
        for ((y, x), &v) in sample.skeleton.pixels.indexed_iter() {
            skel[[i, 0, y, x]] = v as f32;
        }
        for ((c, y, x), &v) in sample.target.pixels.indexed_iter() {
            targ[[i, c, y, x]] = v;
        }
    }
    Ok((skel, targ))
}

fn select(all: &Tensor4, idx: &[usize]) -> Tensor4 {
    let (_, c, h, w) = all.dim();
    let mut out = Tensor4::zeros((idx.len(), c, h, w));
    for (i, &j) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&all.index_axis(Axis(0), j));
    }
    out
}

/// Train the adversarial pair with alternating single updates: one
/// discriminator step on a real and a generated pair, then one generator
/// step against the refreshed discriminator. Deterministic per seed.
pub fn train_pix2pix(
    dataset: &[PairedSample],
    config: &TranslatorConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let (skel_all, targ_all) = batch_tensors(dataset, config)?;
    let n = dataset.len();

    let mut p2p = Pix2Pix::new(config.clone())?;
    let mut init_rng = seed::rng(config.seed, "pix2pix-init");
    p2p.init_weights(&mut init_rng);

    let (beta1, beta2) = (0.5, 0.999);
    let mut adam_g = Adam::new(config.learning_rate, beta1, beta2);
    let mut adam_d = Adam::new(config.learning_rate, beta1, beta2);
    let mut order_rng = seed::rng(config.seed, "pix2pix-order");
    let mut dropout_rng = seed::rng(config.seed, "pix2pix-dropout");
    let mut queue: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if queue.is_empty() {
                queue = (0..n).collect();
                for i in (1..queue.len()).rev() {
                    let j = order_rng.gen_range(0..=i);
                    queue.swap(i, j);
                }
            }
            idx.push(queue.pop().unwrap());
        }
        let xs = select(&skel_all, &idx);
        let xt = select(&targ_all, &idx);

        let fake = p2p.generator.forward(&xs, true, true, &mut dropout_rng);

        // Discriminator step.
        p2p.discriminator.zero_grad();
        let pred_real = p2p.discriminator.forward(&concat_channels(&xs, &xt), true);
        let loss_real = bce_loss(&pred_real, 1.0);
        p2p.discriminator.backward(&bce_grad(&pred_real, 1.0));
        let pred_fake = p2p.discriminator.forward(&concat_channels(&xs, &fake), true);
        let loss_fake = bce_loss(&pred_fake, 0.0);
        p2p.discriminator.backward(&bce_grad(&pred_fake, 0.0));
        let d_loss = loss_real + loss_fake;
        adam_d.step(&mut p2p.discriminator.slots());

        // Generator step against the updated discriminator.
        p2p.generator.zero_grad();
        p2p.discriminator.zero_grad();
        let pred = p2p.discriminator.forward(&concat_channels(&xs, &fake), true);
        let g_adv = generator_adversarial_loss(&pred);
        let g_pair = p2p.discriminator.backward(&bce_grad(&pred, 1.0));
        let (_, g_fake_adv) = split_channels(&g_pair, 1);
        let g_l1 = l1_loss(&fake, &xt);
        let g_fake = &g_fake_adv + &l1_grad(&fake, &xt).mapv(|v| v * config.lambda_l1);
        p2p.generator.backward(&g_fake);
        adam_g.step(&mut p2p.generator.slots());

        let total = d_loss + g_adv + config.lambda_l1 * g_l1;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                unit: "step",
                index: step,
                value: total,
            });
        }
        let record = StepRecord {
            step,
            d_loss,
            g_adv_loss: g_adv,
            g_l1_loss: g_l1,
        };
        on_step(&record);
        history.push(record);
    }
    Ok(p2p.to_checkpoint(history_to_csv(&history)))
}

/// Translate one skeleton to a leaf image. A blank skeleton is valid input.
/// `dropout_active` re-enables the decoder's stochastic units so repeated
/// calls sample visually distinct leaves from one skeleton.
pub fn translate(
    p2p: &mut Pix2Pix,
    skeleton: &SkeletonMask,
    dropout_active: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SpectralImage> {
    let s = p2p.config.image_size;
    if skeleton.height() != s || skeleton.width() != s {
        return Err(Error::ShapeMismatch(format!(
            "skeleton {} is {}x{}, trained size is {s}x{s}",
            skeleton.source_id,
            skeleton.height(),
            skeleton.width()
        )));
    }
    let mut x = Tensor4::zeros((1, 1, s, s));
    for ((y, xx), &v) in skeleton.pixels.indexed_iter() {
        x[[0, 0, y, xx]] = v as f32;
    }
    let out = p2p.generator.forward(&x, false, dropout_active, rng);
    let pixels = out.index_axis(Axis(0), 0).to_owned();
    SpectralImage::new(
        pixels,
        p2p.config.mode.channels().to_vec(),
        format!("{}_leaf", skeleton.source_id),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;

    fn tiny_config() -> TranslatorConfig {
        TranslatorConfig {
            image_size: 32,
            base_filters: 2,
            seed: 5,
            ..TranslatorConfig::default()
        }
    }

    fn grid(vals: &[f32]) -> Tensor4 {
        Tensor4::from_shape_vec((1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn bce_hand_values() {
        // -ln(0.5) = ln 2 for either target.
        let half = grid(&[0.5]);
        assert_abs_diff_eq!(bce_loss(&half, 1.0), std::f32::consts::LN_2, epsilon = 1e-6);
        assert_abs_diff_eq!(bce_loss(&half, 0.0), std::f32::consts::LN_2, epsilon = 1e-6);
        // -ln(0.9) for confident correct prediction.
        assert_abs_diff_eq!(bce_loss(&grid(&[0.9]), 1.0), -(0.9f32.ln()), epsilon = 1e-6);
        // Mean over elements.
        let two = grid(&[0.9, 0.5]);
        let expect = (-(0.9f32.ln()) + std::f32::consts::LN_2) / 2.0;
        assert_abs_diff_eq!(bce_loss(&two, 1.0), expect, epsilon = 1e-6);
    }

    #[test]
    fn bce_saturation_is_finite() {
        for target in [0.0, 1.0] {
            for p in [0.0f32, 1.0] {
                assert!(bce_loss(&grid(&[p]), target).is_finite());
                assert!(bce_grad(&grid(&[p]), target).iter().all(|g| g.is_finite()));
            }
        }
    }

    #[test]
    fn bce_grad_matches_finite_difference() {
        let eps = 1e-3f32;
        for target in [0.0f32, 1.0] {
            for p in [0.2f32, 0.5, 0.8] {
                let g = bce_grad(&grid(&[p]), target)[[0, 0, 0, 0]];
                let num =
                    (bce_loss(&grid(&[p + eps]), target) - bce_loss(&grid(&[p - eps]), target))
                        / (2.0 * eps);
                assert_abs_diff_eq!(g, num, epsilon = 1e-2);
            }
        }
    }

    #[test]
    fn l1_hand_value_and_grad() {
        let a = grid(&[0.0, 1.0, 0.25, 0.75]);
        let b = grid(&[0.5, 0.5, 0.25, 1.0]);
        // |−0.5| + |0.5| + 0 + |−0.25| over 4 elements.
        assert_abs_diff_eq!(l1_loss(&a, &b), 1.25 / 4.0, epsilon = 1e-7);
        let g = l1_grad(&a, &b);
        assert_eq!(g[[0, 0, 0, 0]], -0.25);
        assert_eq!(g[[0, 0, 0, 1]], 0.25);
        assert_eq!(g[[0, 0, 0, 2]], 0.0);
        assert_eq!(g[[0, 0, 0, 3]], -0.25);
    }

    #[test]
    fn loss_wiring_identities() {
        let pr = grid(&[0.7, 0.6]);
        let pf = grid(&[0.3, 0.2]);
        assert_abs_diff_eq!(
            discriminator_loss(&pr, &pf),
            bce_loss(&pr, 1.0) + bce_loss(&pf, 0.0),
            epsilon = 1e-7
        );
        // Indifferent discriminator: both terms are ln 2.
        let half = grid(&[0.5, 0.5]);
        assert_abs_diff_eq!(
            discriminator_loss(&half, &half),
            2.0 * std::f32::consts::LN_2,
            epsilon = 1e-6
        );
        let fake = grid(&[0.1, 0.9]);
        let target = grid(&[0.2, 0.8]);
        for lambda in [0.0f32, 1.0, 100.0] {
            assert_abs_diff_eq!(
                generator_loss(&pf, &fake, &target, lambda),
                generator_adversarial_loss(&pf) + lambda * l1_loss(&fake, &target),
                epsilon = 1e-4
            );
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = Tensor4::from_shape_fn((2, 1, 4, 4), |_| rng.gen::<f32>());
        let b = Tensor4::from_shape_fn((2, 3, 4, 4), |_| rng.gen::<f32>());
        let joined = concat_channels(&a, &b);
        assert_eq!(joined.dim(), (2, 4, 4, 4));
        let (a2, b2) = split_channels(&joined, 1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn prediction_grid_sizes() {
        // 256 -> three halvings to 32, then two 4x4 stride-1 pad-1 layers.
        assert_eq!(PatchDiscriminator::prediction_size(256), 30);
        assert_eq!(PatchDiscriminator::prediction_size(64), 6);
        assert_eq!(PatchDiscriminator::prediction_size(32), 2);
    }

    #[test]
    fn discriminator_output_matches_prediction_size() {
        let cfg = tiny_config();
        let mut d = PatchDiscriminator::new(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        d.init_weights(0.02, &mut rng);
        let x = Tensor4::from_shape_fn((2, 4, 32, 32), |_| rng.gen::<f32>());
        let p = d.forward(&x, false);
        let g = PatchDiscriminator::prediction_size(32);
        assert_eq!(p.dim(), (2, 1, g, g));
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn generator_output_shape_range_determinism() {
        let cfg = tiny_config();
        let mut gen = UNetGenerator::new(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        gen.init_weights(0.02, &mut rng);
        let x = Tensor4::from_shape_fn((1, 1, 32, 32), |_| rng.gen::<f32>().round());
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let y1 = gen.forward(&x, false, false, &mut r1);
        assert_eq!(y1.dim(), (1, 3, 32, 32));
        assert!(y1.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y2 = gen.forward(&x, false, false, &mut r2);
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dropout_changes_inference_output() {
        let cfg = tiny_config();
        let mut gen = UNetGenerator::new(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        gen.init_weights(0.05, &mut rng);
        let x = Tensor4::ones((1, 1, 32, 32));
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let y1 = gen.forward(&x, false, true, &mut r1);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let y2 = gen.forward(&x, false, true, &mut r2);
        assert_ne!(y1, y2, "stochastic units should vary with the noise stream");
    }

    fn tiny_dataset(n: usize) -> Vec<PairedSample> {
        crate::toy::generate_toy_dataset(n, 32, 7, ColorMode::Rgb).unwrap()
    }

    #[test]
    fn training_runs_and_checkpoint_round_trips() {
        let cfg = TranslatorConfig {
            steps: 3,
            ..tiny_config()
        };
        let data = tiny_dataset(2);
        let mut records = Vec::new();
        let ckpt = train_pix2pix(&data, &cfg, |r| records.push(*r)).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records
            .iter()
            .all(|r| r.d_loss.is_finite() && r.g_adv_loss.is_finite() && r.g_l1_loss.is_finite()));
        assert!(ckpt.history_csv.starts_with("step,d_loss,g_adv_loss,g_l1_loss\n"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        ckpt.save(&path).unwrap();
        let mut p1 = Pix2Pix::from_checkpoint(&ckpt).unwrap();
        let mut p2 = Pix2Pix::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let skel = data[0].skeleton.clone();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let y1 = translate(&mut p1, &skel, false, &mut r1).unwrap();
        let y2 = translate(&mut p2, &skel, false, &mut r2).unwrap();
        for (a, b) in y1.pixels.iter().zip(y2.pixels.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cfg = TranslatorConfig {
            steps: 2,
            ..tiny_config()
        };
        let data = tiny_dataset(2);
        let c1 = train_pix2pix(&data, &cfg, |_| {}).unwrap();
        let c2 = train_pix2pix(&data, &cfg, |_| {}).unwrap();
        assert_eq!(c1.tensors, c2.tensors);
        assert_eq!(c1.history_csv, c2.history_csv);
    }

    #[test]
    fn translate_accepts_blank_skeleton() {
        let cfg = tiny_config();
        let mut p2p = Pix2Pix::new(cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        p2p.init_weights(&mut rng);
        let blank = SkeletonMask::new(Array2::zeros((32, 32)), "blank");
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = translate(&mut p2p, &blank, false, &mut r).unwrap();
        assert_eq!(out.channels(), 3);
        assert!(out.pixels.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn translate_rejects_size_mismatch() {
        let cfg = tiny_config();
        let mut p2p = Pix2Pix::new(cfg).unwrap();
        let skel = SkeletonMask::new(Array2::zeros((16, 16)), "s");
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(translate(&mut p2p, &skel, false, &mut r).is_err());
    }

    #[test]
    fn l1_pulls_generator_toward_target() {
        // With lambda large and only 6 samples, a few hundred steps of the
        // tiny net should reduce the L1 term.
        let cfg = TranslatorConfig {
            steps: 60,
            learning_rate: 0.002,
            ..tiny_config()
        };
        let data = tiny_dataset(2);
        let mut first = None;
        let mut last = None;
        train_pix2pix(&data, &cfg, |r| {
            if first.is_none() {
                first = Some(r.g_l1_loss);
            }
            last = Some(r.g_l1_loss);
        })
        .unwrap();
        assert!(
            last.unwrap() < first.unwrap(),
            "L1 did not improve: {} -> {}",
            first.unwrap(),
            last.unwrap()
        );
    }
}
