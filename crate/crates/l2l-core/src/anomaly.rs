//! Anomaly-detection evaluation of generated leaves.
//!
//! A plain (non-variational) convolutional autoencoder is trained to
//! reconstruct real leaf images only. The anomaly score of an image is its
//! mean squared reconstruction error; scoring a mixed pool of real and
//! generated leaves yields an ROC curve whose area under the curve measures
//! how separable the generated images are from the real ones. Lower AUC
//! means the generated leaves look more like the real population.

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EntryMap, KIND_ANOMALY_AE};
use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::layers::{BatchNorm2d, Dense, LeakyReLU, Sigmoid};
use crate::nn::{ParamSlot, Tensor4, TensorEntry};
use crate::raster::SpectralImage;
use crate::seed;

const BOTTLENECK: usize = 8;
const CHANNELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnomalyConfig {
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_kernel")]
    pub kernel_size: usize,
    #[serde(default = "d_image")]
    pub image_size: usize,
    #[serde(default = "d_base")]
    pub base_filters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_latent() -> usize {
    64
}
fn d_lr() -> f32 {
    0.001
}
fn d_epochs() -> usize {
    200
}
fn d_batch() -> usize {
    16
}
fn d_kernel() -> usize {
    4
}
fn d_image() -> usize {
    256
}
fn d_base() -> usize {
    16
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).unwrap()
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.latent_dim > 0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.kernel_size > 0
            && self.base_filters > 0;
        if !ok {
            return Err(Error::Config {
                key: "anomaly".into(),
                message: "counts and rates must be positive".into(),
            });
        }
        if self.image_size < 2 * BOTTLENECK || !self.image_size.is_power_of_two() {
            return Err(Error::Config {
                key: "anomaly.image_size".into(),
                message: format!("must be a power of two >= {}", 2 * BOTTLENECK),
            });
        }
        Ok(())
    }

    fn stage_widths(&self) -> Vec<usize> {
        let stages = (self.image_size / BOTTLENECK).trailing_zeros() as usize;
        (0..stages).map(|i| (self.base_filters << i).min(256)).collect()
    }
}

/// Convolutional autoencoder over 3-channel leaf images.
pub struct AnomalyAe {
    pub config: AnomalyConfig,
    enc_convs: Vec<Conv2d>,
    enc_bns: Vec<BatchNorm2d>,
    enc_acts: Vec<LeakyReLU>,
    fc_down: Dense,
    fc_up: Dense,
    dec_convs: Vec<ConvTranspose2d>,
    dec_bns: Vec<BatchNorm2d>,
    dec_acts: Vec<LeakyReLU>,
    out_act: Sigmoid,
    bottleneck_channels: usize,
}

impl AnomalyAe {
    pub fn new(config: AnomalyConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.stage_widths();
        let k = config.kernel_size;
        let mut enc_convs = Vec::new();
        let mut in_c = CHANNELS;
        for &w in &widths {
            enc_convs.push(Conv2d::down(in_c, w, k));
            in_c = w;
        }
        let last = *widths.last().unwrap();
        let flat = last * BOTTLENECK * BOTTLENECK;
        // Mirrored decoder; the final stage maps back to image channels.
        let mut dec_widths: Vec<usize> = widths[..widths.len() - 1].to_vec();
        dec_widths.reverse();
        dec_widths.push(CHANNELS);
        let mut dec_convs = Vec::new();
        let mut cur = last;
        for &w in &dec_widths {
            dec_convs.push(ConvTranspose2d::up(cur, w, k));
            cur = w;
        }
        // No norm/activation after the final stage; sigmoid output instead.
        let hidden = dec_widths.len() - 1;
        Ok(AnomalyAe {
            enc_bns: widths.iter().map(|&w| BatchNorm2d::new(w)).collect(),
            enc_acts: widths.iter().map(|_| LeakyReLU::new(0.2)).collect(),
            fc_down: Dense::new(flat, config.latent_dim),
            fc_up: Dense::new(config.latent_dim, flat),
            dec_bns: dec_widths[..hidden].iter().map(|&w| BatchNorm2d::new(w)).collect(),
            dec_acts: dec_widths[..hidden].iter().map(|_| LeakyReLU::new(0.2)).collect(),
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
        self.fc_down.init_he(rng);
        self.fc_up.init_he(rng);
        for c in &mut self.dec_convs {
            c.init_he(rng);
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
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
        let z = self.fc_down.forward(&flat);
        let up = self.fc_up.forward(&z);
        let mut h = up
            .into_shape_with_order((n, self.bottleneck_channels, BOTTLENECK, BOTTLENECK))
            .unwrap();
        for i in 0..self.dec_convs.len() {
            h = self.dec_convs[i].forward(&h);
            if i < self.dec_bns.len() {
                h = self.dec_bns[i].forward(&h, train);
                h = self.dec_acts[i].forward(&h);
            }
        }
        self.out_act.forward(&h)
    }

    pub fn backward(&mut self, gy: &Tensor4) {
        let mut g = self.out_act.backward(gy);
        for i in (0..self.dec_convs.len()).rev() {
            if i < self.dec_bns.len() {
                g = self.dec_acts[i].backward(&g);
                g = self.dec_bns[i].backward(&g);
            }
            g = self.dec_convs[i].backward(&g);
        }
        let n = g.dim().0;
        let g_flat = g
            .into_shape_with_order((n, self.bottleneck_channels * BOTTLENECK * BOTTLENECK))
            .unwrap();
        let gz = self.fc_up.backward(&g_flat);
        let g_flat = self.fc_down.backward(&gz);
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

    pub fn zero_grad(&mut self) {
        for c in &mut self.enc_convs {
            c.zero_grad();
        }
        for bn in &mut self.enc_bns {
            bn.zero_grad();
        }
        self.fc_down.zero_grad();
        self.fc_up.zero_grad();
        for c in &mut self.dec_convs {
            c.zero_grad();
        }
        for bn in &mut self.dec_bns {
            bn.zero_grad();
        }
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for (c, bn) in self.enc_convs.iter_mut().zip(self.enc_bns.iter_mut()) {
            out.extend(c.slots());
            out.extend(bn.slots());
        }
        out.extend(self.fc_down.slots());
        out.extend(self.fc_up.slots());
        let mut bns = self.dec_bns.iter_mut();
        for c in self.dec_convs.iter_mut() {
            out.extend(c.slots());
            if let Some(bn) = bns.next() {
                out.extend(bn.slots());
            }
        }
        out
    }

    pub fn state_dict(&self) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, (c, bn)) in self.enc_convs.iter().zip(self.enc_bns.iter()).enumerate() {
            out.extend(c.entries(&format!("enc{i}.conv")));
            out.extend(bn.entries(&format!("enc{i}.bn")));
        }
        out.extend(self.fc_down.entries("fc_down"));
        out.extend(self.fc_up.entries("fc_up"));
        for (i, c) in self.dec_convs.iter().enumerate() {
            out.extend(c.entries(&format!("dec{i}.conv")));
            if let Some(bn) = self.dec_bns.get(i) {
                out.extend(bn.entries(&format!("dec{i}.bn")));
            }
        }
        out
    }

    pub fn load_state_dict(&mut self, entries: &[TensorEntry]) -> Result<()> {
        let mut map = EntryMap::new(entries);
        for (i, (c, bn)) in self.enc_convs.iter_mut().zip(self.enc_bns.iter_mut()).enumerate() {
            c.load(&format!("enc{i}.conv"), &mut map)?;
            bn.load(&format!("enc{i}.bn"), &mut map)?;
        }
        self.fc_down.load("fc_down", &mut map)?;
        self.fc_up.load("fc_up", &mut map)?;
        for (i, c) in self.dec_convs.iter_mut().enumerate() {
            c.load(&format!("dec{i}.conv"), &mut map)?;
            if let Some(bn) = self.dec_bns.get_mut(i) {
                bn.load(&format!("dec{i}.bn"), &mut map)?;
            }
        }
        map.finish()
    }

    pub fn to_checkpoint(&self, history_csv: String) -> Checkpoint {
        let mut ckpt = Checkpoint::new(
            KIND_ANOMALY_AE,
            self.config.seed,
            serde_json::to_value(&self.config).unwrap(),
        );
        ckpt.history_csv = history_csv;
        ckpt.tensors = self.state_dict();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<AnomalyAe> {
        ckpt.expect_kind(KIND_ANOMALY_AE)?;
        let config: AnomalyConfig = ckpt.config_as()?;
        let mut ae = AnomalyAe::new(config)?;
        ae.load_state_dict(&ckpt.tensors)?;
        Ok(ae)
    }

    pub fn image_tensor(&self, images: &[&SpectralImage]) -> Result<Tensor4> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let s = self.config.image_size;
        let mut x = Tensor4::zeros((images.len(), CHANNELS, s, s));
        for (i, img) in images.iter().enumerate() {
            if img.channels() != CHANNELS || img.height() != s || img.width() != s {
                return Err(Error::ShapeMismatch(format!(
                    "image {} is {}x{}x{}, expected {CHANNELS}x{s}x{s}",
                    img.source_id,
                    img.channels(),
                    img.height(),
                    img.width()
                )));
            }
            for ((c, y, xx), &v) in img.pixels.indexed_iter() {
                x[[i, c, y, xx]] = v;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AeEpochRecord {
    pub epoch: usize,
    pub loss: f32,
}

pub fn history_to_csv(history: &[AeEpochRecord]) -> String {
    let mut s = String::from("epoch,loss\n");
    for r in history {
        s.push_str(&format!("{},{}\n", r.epoch, r.loss));
    }
    s
}

/// Train the autoencoder on real images only (mean-squared reconstruction
/// loss, Adam). Deterministic per seed.
pub fn train_anomaly_ae(
    images: &[SpectralImage],
    config: &AnomalyConfig,
    mut on_epoch: impl FnMut(&AeEpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let mut ae = AnomalyAe::new(config.clone())?;
    let mut init_rng = seed::rng(config.seed, "anomaly-init");
    ae.init_weights(&mut init_rng);
    let refs: Vec<&SpectralImage> = images.iter().collect();
    let x_all = ae.image_tensor(&refs)?;
    let n = images.len();

    let mut opt = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut shuffle_rng = seed::rng(config.seed, "anomaly-shuffle");
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0f32;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut x = Tensor4::zeros((
                chunk.len(),
                CHANNELS,
                config.image_size,
                config.image_size,
            ));
            for (i, &j) in chunk.iter().enumerate() {
                x.index_axis_mut(Axis(0), i).assign(&x_all.index_axis(Axis(0), j));
            }
            ae.zero_grad();
            let y = ae.forward(&x, true);
            let m = x.len() as f32;
            let loss = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                / m;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    unit: "epoch",
                    index: epoch,
                    value: loss,
                });
            }
            let gy = (&y - &x) * (2.0 / m);
            ae.backward(&gy);
            opt.step(&mut ae.slots());
            loss_sum += loss;
            batches += 1;
        }
        let record = AeEpochRecord {
            epoch,
            loss: loss_sum / batches as f32,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(ae.to_checkpoint(history_to_csv(&history)))
}

/// Mean squared reconstruction error of one image (inference mode).
pub fn anomaly_score(ae: &mut AnomalyAe, image: &SpectralImage) -> Result<f32> {
    let x = ae.image_tensor(&[image])?;
    let y = ae.forward(&x, false);
    let m = x.len() as f32;
    Ok(x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f32>() / m)
}

/// One scored image. `synthetic` marks the positive (generated) class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub source_id: String,
    pub value: f32,
    pub synthetic: bool,
}

/// ROC curve points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per
/// distinct score threshold, plus the threshold that produced each point.
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Build the ROC of classifying "synthetic" by `score >= threshold`.
/// Requires at least one sample of each class.
pub fn roc_curve(scores: &[AnomalyScore]) -> Result<RocCurve> {
    let pos = scores.iter().filter(|s| s.synthetic).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassRoc);
    }
    let mut sorted: Vec<&AnomalyScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].value;
        // Consume the whole tie group so ties share one operating point.
        while i < sorted.len() && sorted[i].value == t {
            if sorted[i].synthetic {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t as f64);
    }
    Ok(RocCurve { points, thresholds })
}

/// Area under the ROC curve by the trapezoidal rule.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Evaluation summary for a pool of real and generated leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auc: f64,
    /// Threshold maximizing `tpr - fpr` (Youden's J).
    pub youden_threshold: f64,
    /// True-positive rate at that threshold: generated leaves flagged.
    pub detection_rate: f64,
    /// False-positive rate at that threshold: real leaves misflagged.
    pub false_positive_rate: f64,
    pub real_count: usize,
    pub synthetic_count: usize,
    pub scores: Vec<AnomalyScore>,
}

pub fn scores_to_csv(scores: &[AnomalyScore]) -> String {
    let mut s = String::from("source_id,label,score\n");
    for r in scores {
        let label = if r.synthetic { "synthetic" } else { "real" };
        s.push_str(&format!("{},{},{}\n", r.source_id, label, r.value));
    }
    s
}

/// Score every image and summarize separability of the generated set.
pub fn evaluate_synthetic_set(
    ae: &mut AnomalyAe,
    real: &[SpectralImage],
    synthetic: &[SpectralImage],
) -> Result<EvaluationReport> {
    let mut scores = Vec::with_capacity(real.len() + synthetic.len());
    for img in real {
        scores.push(AnomalyScore {
            source_id: img.source_id.clone(),
            value: anomaly_score(ae, img)?,
            synthetic: false,
        });
    }
    for img in synthetic {
        scores.push(AnomalyScore {
            source_id: img.source_id.clone(),
            value: anomaly_score(ae, img)?,
            synthetic: true,
        });
    }
    let curve = roc_curve(&scores)?;
    let area = auc(&curve);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &(fpr, tpr)) in curve.points.iter().enumerate() {
        if tpr - fpr > best.1 {
            best = (i, tpr - fpr);
        }
    }
    let (fpr, tpr) = curve.points[best.0];
    Ok(EvaluationReport {
        auc: area,
        youden_threshold: curve.thresholds[best.0],
        detection_rate: tpr,
        false_positive_rate: fpr,
        real_count: real.len(),
        synthetic_count: synthetic.len(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn score(v: f32, synthetic: bool) -> AnomalyScore {
        AnomalyScore {
            source_id: format!("{v}-{synthetic}"),
            value: v,
            synthetic,
        }
    }

    #[test]
    fn perfect_separation_auc_one() {
        let scores = vec![
            score(0.9, true),
            score(0.8, true),
            score(0.2, false),
            score(0.1, false),
        ];
        let c = roc_curve(&scores).unwrap();
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        assert_abs_diff_eq!(auc(&c), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverted_separation_auc_zero() {
        let scores = vec![score(0.1, true), score(0.9, false)];
        assert_abs_diff_eq!(auc(&roc_curve(&scores).unwrap()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn all_tied_auc_half() {
        let scores = vec![score(0.5, true), score(0.5, false), score(0.5, true)];
        assert_abs_diff_eq!(auc(&roc_curve(&scores).unwrap()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_interleaved_auc() {
        // Scores desc: 4(s), 3(r), 2(s), 1(r). Pairs (syn > real):
        // (4,3),(4,1),(2,1) of 4 pairs -> AUC = 3/4.
        let scores = vec![
            score(4.0, true),
            score(3.0, false),
            score(2.0, true),
            score(1.0, false),
        ];
        assert_abs_diff_eq!(auc(&roc_curve(&scores).unwrap()), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn auc_equals_mann_whitney_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let scores: Vec<AnomalyScore> = (0..30)
                .map(|i| {
                    // Quantized scores so ties actually occur.
                    let v = (rng.gen::<f32>() * 8.0).round() / 8.0;
                    AnomalyScore {
                        source_id: format!("t{trial}i{i}"),
                        value: v,
                        synthetic: rng.gen::<bool>(),
                    }
                })
                .collect();
            let pos: Vec<f32> = scores.iter().filter(|s| s.synthetic).map(|s| s.value).collect();
            let neg: Vec<f32> = scores.iter().filter(|s| !s.synthetic).map(|s| s.value).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut u = 0.0f64;
            for &p in &pos {
                for &q in &neg {
                    u += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            let mw = u / (pos.len() * neg.len()) as f64;
            let area = auc(&roc_curve(&scores).unwrap());
            assert_abs_diff_eq!(area, mw, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let scores = vec![score(0.5, true), score(0.4, true)];
        assert!(matches!(roc_curve(&scores), Err(Error::SingleClassRoc)));
        assert!(roc_curve(&[]).is_err());
    }

    #[test]
    fn roc_monotone_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<AnomalyScore> = (0..50)
            .map(|i| AnomalyScore {
                source_id: format!("s{i}"),
                value: rng.gen(),
                synthetic: i % 2 == 0,
            })
            .collect();
        let c = roc_curve(&scores).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        for w in c.thresholds.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    fn tiny_config() -> AnomalyConfig {
        AnomalyConfig {
            image_size: 32,
            base_filters: 4,
            latent_dim: 16,
            epochs: 2,
            batch_size: 2,
            seed: 21,
            ..AnomalyConfig::default()
        }
    }

    fn toy_images(n: usize) -> Vec<SpectralImage> {
        crate::toy::generate_toy_dataset(n, 32, 13, crate::raster::ColorMode::Rgb)
            .unwrap()
            .into_iter()
            .map(|p| p.target)
            .collect()
    }

    #[test]
    fn training_and_scoring_deterministic() {
        let imgs = toy_images(3);
        let cfg = tiny_config();
        let c1 = train_anomaly_ae(&imgs, &cfg, |_| {}).unwrap();
        let c2 = train_anomaly_ae(&imgs, &cfg, |_| {}).unwrap();
        assert_eq!(c1.tensors, c2.tensors);

        let mut ae = AnomalyAe::from_checkpoint(&c1).unwrap();
        let s1 = anomaly_score(&mut ae, &imgs[0]).unwrap();
        let s2 = anomaly_score(&mut ae, &imgs[0]).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert!(s1 >= 0.0);
    }

    #[test]
    fn score_is_mse_oracle() {
        // Untrained AE with fixed weights: verify the score equals the mean
        // squared error computed independently from the forward output.
        let cfg = tiny_config();
        let mut ae = AnomalyAe::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        ae.init_weights(&mut rng);
        let img = &toy_images(1)[0];
        let x = ae.image_tensor(&[img]).unwrap();
        let y = ae.forward(&x, false);
        let expect: f32 = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            / x.len() as f32;
        let got = anomaly_score(&mut ae, img).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-9);
    }

    #[test]
    fn training_reduces_reconstruction_loss() {
        let imgs = toy_images(4);
        let cfg = AnomalyConfig {
            epochs: 30,
            learning_rate: 0.005,
            ..tiny_config()
        };
        let mut first = None;
        let mut last = None;
        train_anomaly_ae(&imgs, &cfg, |r| {
            if first.is_none() {
                first = Some(r.loss);
            }
            last = Some(r.loss);
        })
        .unwrap();
        assert!(
            last.unwrap() < first.unwrap(),
            "loss did not improve: {:?} -> {:?}",
            first,
            last
        );
    }

    #[test]
    fn evaluation_report_ranks_noise_as_anomalous() {
        let imgs = toy_images(6);
        let cfg = AnomalyConfig {
            epochs: 40,
            learning_rate: 0.005,
            ..tiny_config()
        };
        let ckpt = train_anomaly_ae(&imgs, &cfg, |_| {}).unwrap();
        let mut ae = AnomalyAe::from_checkpoint(&ckpt).unwrap();
        // "Synthetic" images that are pure noise must be easy to flag.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<SpectralImage> = (0..4)
            .map(|i| {
                SpectralImage::new(
                    Array3::from_shape_fn((3, 32, 32), |_| rng.gen::<f32>()),
                    crate::raster::ColorMode::Rgb.channels().to_vec(),
                    format!("noise{i}"),
                )
                .unwrap()
            })
            .collect();
        let report = evaluate_synthetic_set(&mut ae, &imgs, &noise).unwrap();
        assert!(report.auc > 0.9, "auc = {}", report.auc);
        assert!(report.detection_rate >= report.false_positive_rate);
        assert_eq!(report.real_count, 6);
        assert_eq!(report.synthetic_count, 4);
        let csv = scores_to_csv(&report.scores);
        assert_eq!(csv.lines().count(), 11);
    }
}
