//! Non-convolutional layers: batch normalization, dense, activations and
//! dropout.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{matmul, ParamSlot, Tensor4, TensorEntry};
use crate::checkpoint::EntryMap;

/// Per-channel batch normalization over `(batch, rows, cols)`.
pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub ggamma: Array1<f32>,
    pub gbeta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Tensor4,
    inv_std: Array1<f32>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            ggamma: Array1::zeros(channels),
            gbeta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f32;
        let mut y = Tensor4::zeros(x.raw_dim());
        let mut xhat = Tensor4::zeros(x.raw_dim());
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            let (mean, var) = if train {
                let mut m = 0f32;
                for b in 0..n {
                    m += x.index_axis(Axis(0), b).index_axis(Axis(0), ch).sum();
                }
                m /= count;
                let mut v = 0f32;
                for b in 0..n {
                    for val in x.index_axis(Axis(0), b).index_axis(Axis(0), ch).iter() {
                        v += (val - m) * (val - m);
                    }
                }
                v /= count;
                self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * m;
                self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * v;
                (m, v)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            for b in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let xh = (x[[b, ch, yy, xx]] - mean) * inv;
                        xhat[[b, ch, yy, xx]] = xh;
                        y[[b, ch, yy, xx]] = self.gamma[ch] * xh + self.beta[ch];
                    }
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, train });
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let cache = self.cache.take().expect("batchnorm backward before forward");
        let (n, c, h, w) = gy.dim();
        let count = (n * h * w) as f32;
        let mut gx = Tensor4::zeros(gy.raw_dim());
        for ch in 0..c {
            let mut sum_gy = 0f32;
            let mut sum_gy_xhat = 0f32;
            for b in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let g = gy[[b, ch, yy, xx]];
                        sum_gy += g;
                        sum_gy_xhat += g * cache.xhat[[b, ch, yy, xx]];
                    }
                }
            }
            self.ggamma[ch] += sum_gy_xhat;
            self.gbeta[ch] += sum_gy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            for b in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let g = gy[[b, ch, yy, xx]];
                        gx[[b, ch, yy, xx]] = if cache.train {
                            scale / count
                                * (count * g - sum_gy - cache.xhat[[b, ch, yy, xx]] * sum_gy_xhat)
                        } else {
                            scale * g
                        };
                    }
                }
            }
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.ggamma.fill(0.0);
        self.gbeta.fill(0.0);
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                data: self.gamma.as_slice_mut().unwrap(),
                grad: self.ggamma.as_slice_mut().unwrap(),
            },
            ParamSlot {
                data: self.beta.as_slice_mut().unwrap(),
                grad: self.gbeta.as_slice_mut().unwrap(),
            },
        ]
    }

    pub fn entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let c = self.gamma.len();
        vec![
            TensorEntry::new(format!("{prefix}.gamma"), vec![c], self.gamma.to_vec()),
            TensorEntry::new(format!("{prefix}.beta"), vec![c], self.beta.to_vec()),
            TensorEntry::new(format!("{prefix}.running_mean"), vec![c], self.running_mean.to_vec()),
            TensorEntry::new(format!("{prefix}.running_var"), vec![c], self.running_var.to_vec()),
        ]
    }

    pub fn load(&mut self, prefix: &str, entries: &mut EntryMap) -> crate::Result<()> {
        entries.take_into(&format!("{prefix}.gamma"), self.gamma.as_slice_mut().unwrap())?;
        entries.take_into(&format!("{prefix}.beta"), self.beta.as_slice_mut().unwrap())?;
        entries.take_into(
            &format!("{prefix}.running_mean"),
            self.running_mean.as_slice_mut().unwrap(),
        )?;
        entries.take_into(
            &format!("{prefix}.running_var"),
            self.running_var.as_slice_mut().unwrap(),
        )?;
        Ok(())
    }
}

/// Fully connected layer on `(batch, features)` matrices.
pub struct Dense {
    pub w: Array2<f32>, // (out, in)
    pub b: Array1<f32>,
    pub gw: Array2<f32>,
    pub gb: Array1<f32>,
    cache: Option<Array2<f32>>,
}

impl Dense {
    pub fn new(in_f: usize, out_f: usize) -> Self {
        Dense {
            w: Array2::zeros((out_f, in_f)),
            b: Array1::zeros(out_f),
            gw: Array2::zeros((out_f, in_f)),
            gb: Array1::zeros(out_f),
            cache: None,
        }
    }

    pub fn init_he(&mut self, rng: &mut impl Rng) {
        let fan_in = self.w.ncols();
        super::init_he(self.w.as_slice_mut().unwrap(), fan_in, rng);
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = matmul(x.view(), self.w.t());
        for mut row in y.axis_iter_mut(Axis(0)) {
            row += &self.b;
        }
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.take().expect("dense backward before forward");
        self.gw += &matmul(gy.t(), x.view());
        self.gb += &gy.sum_axis(Axis(0));
        matmul(gy.view(), self.w.view())
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                data: self.w.as_slice_mut().unwrap(),
                grad: self.gw.as_slice_mut().unwrap(),
            },
            ParamSlot {
                data: self.b.as_slice_mut().unwrap(),
                grad: self.gb.as_slice_mut().unwrap(),
            },
        ]
    }

    pub fn entries(&self, prefix: &str) -> Vec<TensorEntry> {
        vec![
            TensorEntry::new(
                format!("{prefix}.w"),
                vec![self.w.nrows(), self.w.ncols()],
                self.w.iter().copied().collect(),
            ),
            TensorEntry::new(format!("{prefix}.b"), vec![self.b.len()], self.b.to_vec()),
        ]
    }

    pub fn load(&mut self, prefix: &str, entries: &mut EntryMap) -> crate::Result<()> {
        entries.take_into(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap())?;
        entries.take_into(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap())?;
        Ok(())
    }
}

/// Leaky rectifier with a configurable negative slope.
pub struct LeakyReLU {
    pub alpha: f32,
    mask: Option<Tensor4>,
}

impl LeakyReLU {
    pub fn new(alpha: f32) -> Self {
        LeakyReLU { alpha, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let alpha = self.alpha;
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { alpha });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        gy * &self.mask.take().expect("activation backward before forward")
    }
}

/// Logistic sigmoid.
pub struct Sigmoid {
    y: Option<Tensor4>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Sigmoid { y: None }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let y = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let y = self.y.take().expect("sigmoid backward before forward");
        gy * &y.mapv(|v| v * (1.0 - v))
    }
}

impl Default for Sigmoid {
    fn default() -> Self {
        Sigmoid::new()
    }
}

/// Hyperbolic tangent.
pub struct Tanh {
    y: Option<Tensor4>,
}

impl Tanh {
    pub fn new() -> Self {
        Tanh { y: None }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let y = x.mapv(f32::tanh);
        self.y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let y = self.y.take().expect("tanh backward before forward");
        gy * &y.mapv(|v| 1.0 - v * v)
    }
}

impl Default for Tanh {
    fn default() -> Self {
        Tanh::new()
    }
}

/// Inverted dropout: active masks scale survivors by `1/(1-rate)` so the
/// expectation is unchanged; inactive calls are the identity.
pub struct Dropout {
    pub rate: f32,
    mask: Option<Tensor4>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor4, rng: &mut ChaCha8Rng, active: bool) -> Tensor4 {
        if !active || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask = Tensor4::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        match self.mask.take() {
            Some(mask) => gy * &mask,
            None => gy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn randn(shape: (usize, usize, usize, usize), seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_shape_fn(shape, |_| rng.gen::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = BatchNorm2d::new(2);
        let x = randn((4, 2, 3, 3), 1);
        let y = bn.forward(&x, true);
        for ch in 0..2 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend(y.index_axis(Axis(0), b).index_axis(Axis(0), ch).iter().copied());
            }
            let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
            let var: f32 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / vals.len() as f32;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-4);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-2);
        }
    }

    #[test]
    fn batchnorm_gradcheck() {
        let mut bn = BatchNorm2d::new(2);
        bn.gamma[0] = 1.3;
        bn.beta[1] = -0.4;
        let x = randn((3, 2, 2, 2), 2);
        let target = randn((3, 2, 2, 2), 3);
        let loss_of = |bn: &mut BatchNorm2d, x: &Tensor4| {
            let y = bn.forward(x, true);
            y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f32>()
        };
        let y = bn.forward(&x, true);
        let gy = (&y - &target) * 2.0;
        bn.zero_grad();
        let gx = bn.backward(&gy);
        let eps = 1e-3f32;
        let mut x2 = x.clone();
        for idx in [[0usize, 0, 0, 0], [2, 1, 1, 1]] {
            let orig = x2[idx];
            let mut bn_fresh = |v: f32| {
                x2[idx] = v;
                loss_of(&mut bn, &x2)
            };
            let lp = bn_fresh(orig + eps);
            let lm = bn_fresh(orig - eps);
            x2[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert_abs_diff_eq!(gx[idx], fd, epsilon = 3e-2);
        }
        // gamma gradient
        let orig = bn.gamma[0];
        bn.gamma[0] = orig + eps;
        let lp = loss_of(&mut bn, &x);
        bn.gamma[0] = orig - eps;
        let lm = loss_of(&mut bn, &x);
        bn.gamma[0] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        assert_abs_diff_eq!(bn.ggamma[0], fd, epsilon = 3e-2);
    }

    #[test]
    fn dense_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Dense::new(5, 3);
        d.init_he(&mut rng);
        let x = Array2::from_shape_fn((2, 5), |_| rng.gen::<f32>() - 0.5);
        let target = Array2::from_shape_fn((2, 3), |_| rng.gen::<f32>() - 0.5);
        let y = d.forward(&x);
        let gy = (&y - &target) * 2.0;
        d.zero_grad();
        let gx = d.backward(&gy);
        let eps = 1e-3f32;
        let orig = d.w[[1, 2]];
        let eval = |d: &mut Dense, v: f32| {
            d.w[[1, 2]] = v;
            let y = d.forward(&x);
            y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f32>()
        };
        let lp = eval(&mut d, orig + eps);
        let lm = eval(&mut d, orig - eps);
        d.w[[1, 2]] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        assert_abs_diff_eq!(d.gw[[1, 2]], fd, epsilon = 1e-2);
        // input gradient
        let mut x2 = x.clone();
        let orig = x2[[0, 3]];
        x2[[0, 3]] = orig + eps;
        let y = d.forward(&x2);
        let lp: f32 = y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        x2[[0, 3]] = orig - eps;
        let y = d.forward(&x2);
        let lm: f32 = y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let fd = (lp - lm) / (2.0 * eps);
        assert_abs_diff_eq!(gx[[0, 3]], fd, epsilon = 1e-2);
    }

    #[test]
    fn dropout_inactive_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = Dropout::new(0.5);
        let x = randn((1, 1, 4, 4), 6);
        let y = d.forward(&x, &mut rng, false);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_active_zeroes_and_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut d = Dropout::new(0.5);
        let x = Tensor4::ones((1, 1, 32, 32));
        let y = d.forward(&x, &mut rng, true);
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 300 && zeros < 700, "{zeros} zeroed of 1024");
        for &v in y.iter() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-6);
        }
    }
}
