//! Forward and transposed 2-D convolutions via im2col/col2im GEMM.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use super::{matmul, ParamSlot, Tensor4, TensorEntry};
use crate::exec;

/// Gather sliding-window patches. `img` is `(c, H, W)`; the output has one
/// row per `(channel, ky, kx)` and one column per window position `(oy, ox)`
/// on an `n_oy x n_ox` grid with the given stride and top/left padding.
/// Out-of-frame taps read as zero.
fn im2col(
    img: ArrayView3<f32>,
    n_oy: usize,
    n_ox: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<f32> {
    let (c, hh, ww) = img.dim();
    let mut cols = Array2::<f32>::zeros((c * k * k, n_oy * n_ox));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let mut out_row = cols.row_mut(row);
                for oy in 0..n_oy {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= hh as isize {
                        continue;
                    }
                    for ox in 0..n_ox {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= ww as isize {
                            continue;
                        }
                        out_row[oy * n_ox + ox] = img[[ch, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the adjoint of [`im2col`] back onto a `(c, H, W)` image.
fn col2im(
    cols: &Array2<f32>,
    c: usize,
    hh: usize,
    ww: usize,
    n_oy: usize,
    n_ox: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f32> {
    let mut img = Array3::<f32>::zeros((c, hh, ww));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let in_row = cols.row(row);
                for oy in 0..n_oy {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= hh as isize {
                        continue;
                    }
                    for ox in 0..n_ox {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= ww as isize {
                            continue;
                        }
                        img[[ch, iy as usize, ix as usize]] += in_row[oy * n_ox + ox];
                    }
                }
            }
        }
    }
    img
}

/// Strided 2-D convolution. Padding may be asymmetric (`pad0` top/left,
/// `pad1` bottom/right) so 4x4 kernels can keep the spatial size at stride 1.
pub struct Conv2d {
    pub w: Array2<f32>, // (out_c, in_c * k * k)
    pub b: Array1<f32>,
    pub gw: Array2<f32>,
    pub gb: Array1<f32>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad0: usize,
    pub pad1: usize,
    cache: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad0: usize, pad1: usize) -> Self {
        Conv2d {
            w: Array2::zeros((out_c, in_c * k * k)),
            b: Array1::zeros(out_c),
            gw: Array2::zeros((out_c, in_c * k * k)),
            gb: Array1::zeros(out_c),
            in_c,
            out_c,
            k,
            stride,
            pad0,
            pad1,
            cache: None,
        }
    }

    /// Stride-2 downsampling convolution with symmetric padding 1.
    pub fn down(in_c: usize, out_c: usize, k: usize) -> Self {
        Conv2d::new(in_c, out_c, k, 2, 1, 1)
    }

    /// Stride-1 spatial-size-preserving convolution (asymmetric padding for
    /// even kernels).
    pub fn same(in_c: usize, out_c: usize, k: usize) -> Self {
        let total = k - 1;
        Conv2d::new(in_c, out_c, k, 1, total / 2, total - total / 2)
    }

    pub fn init_he(&mut self, rng: &mut impl Rng) {
        let fan_in = self.in_c * self.k * self.k;
        super::init_he(self.w.as_slice_mut().unwrap(), fan_in, rng);
    }

    pub fn init_normal(&mut self, std: f32, rng: &mut impl Rng) {
        super::init_normal(self.w.as_slice_mut().unwrap(), std, rng);
    }

    pub fn out_size(&self, h: usize) -> usize {
        (h + self.pad0 + self.pad1 - self.k) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "conv input channels");
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let outs: Vec<Array2<f32>> = exec::map_indexed(n, |i| {
            let cols = im2col(x.index_axis(Axis(0), i), oh, ow, self.k, self.stride, self.pad0);
            let mut y = matmul(self.w.view(), cols.view());
            for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
                row += bias;
            }
            y
        });
        let mut out = Tensor4::zeros((n, self.out_c, oh, ow));
        for (i, y) in outs.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i)
                .assign(&y.into_shape_with_order((self.out_c, oh, ow)).unwrap());
        }
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache.take().expect("conv backward before forward");
        let (n, _, h, w) = x.dim();
        let (_, _, oh, ow) = gy.dim();
        let parts: Vec<(Array3<f32>, Array2<f32>, Array1<f32>)> = exec::map_indexed(n, |i| {
            let cols = im2col(x.index_axis(Axis(0), i), oh, ow, self.k, self.stride, self.pad0);
            let gy2 = gy
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((self.out_c, oh * ow))
                .unwrap();
            let gw = matmul(gy2.view(), cols.t());
            let gb = gy2.sum_axis(Axis(1));
            let gcols = matmul(self.w.t(), gy2.view());
            let gx = col2im(&gcols, self.in_c, h, w, oh, ow, self.k, self.stride, self.pad0);
            (gx, gw, gb)
        });
        let mut gx = Tensor4::zeros(x.raw_dim());
        for (i, (gxi, gwi, gbi)) in parts.into_iter().enumerate() {
            gx.index_axis_mut(Axis(0), i).assign(&gxi);
            self.gw += &gwi;
            self.gb += &gbi;
        }
        gx
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
                vec![self.out_c, self.in_c, self.k, self.k],
                self.w.iter().copied().collect(),
            ),
            TensorEntry::new(format!("{prefix}.b"), vec![self.out_c], self.b.to_vec()),
        ]
    }

    pub fn load(&mut self, prefix: &str, entries: &mut super::super::checkpoint::EntryMap) -> crate::Result<()> {
        entries.take_into(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap())?;
        entries.take_into(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap())?;
        Ok(())
    }
}

/// Transposed convolution (fractionally-strided); with `k = 4`, `stride = 2`,
/// `pad = 1` it exactly doubles the spatial size.
pub struct ConvTranspose2d {
    pub w: Array2<f32>, // (in_c, out_c * k * k)
    pub b: Array1<f32>,
    pub gw: Array2<f32>,
    pub gb: Array1<f32>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor4>,
}

impl ConvTranspose2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvTranspose2d {
            w: Array2::zeros((in_c, out_c * k * k)),
            b: Array1::zeros(out_c),
            gw: Array2::zeros((in_c, out_c * k * k)),
            gb: Array1::zeros(out_c),
            in_c,
            out_c,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    /// Stride-2 upsampling block (doubles spatial size with k=4, pad=1).
    pub fn up(in_c: usize, out_c: usize, k: usize) -> Self {
        ConvTranspose2d::new(in_c, out_c, k, 2, 1)
    }

    pub fn init_he(&mut self, rng: &mut impl Rng) {
        let fan_in = self.in_c * self.k * self.k;
        super::init_he(self.w.as_slice_mut().unwrap(), fan_in, rng);
    }

    pub fn init_normal(&mut self, std: f32, rng: &mut impl Rng) {
        super::init_normal(self.w.as_slice_mut().unwrap(), std, rng);
    }

    pub fn out_size(&self, h: usize) -> usize {
        (h - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "conv-transpose input channels");
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let outs: Vec<Array3<f32>> = exec::map_indexed(n, |i| {
            let x2 = x
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((self.in_c, h * w))
                .unwrap();
            let cols = matmul(self.w.t(), x2.view());
            let mut y = col2im(&cols, self.out_c, oh, ow, h, w, self.k, self.stride, self.pad);
            for (mut plane, &bias) in y.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
                plane += bias;
            }
            y
        });
        let mut out = Tensor4::zeros((n, self.out_c, oh, ow));
        for (i, y) in outs.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(&y);
        }
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache.take().expect("conv-transpose backward before forward");
        let (n, _, h, w) = x.dim();
        let parts: Vec<(Array3<f32>, Array2<f32>, Array1<f32>)> = exec::map_indexed(n, |i| {
            let gyi = gy.index_axis(Axis(0), i);
            // Gathering patches from gy with the forward-conv geometry gives
            // the adjoint of the col2im scatter above.
            let gcols = im2col(gyi, h, w, self.k, self.stride, self.pad);
            let x2 = x
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((self.in_c, h * w))
                .unwrap();
            let gw = matmul(x2.view(), gcols.t());
            let gb = gyi
                .to_owned()
                .into_shape_with_order((self.out_c, gyi.dim().1 * gyi.dim().2))
                .unwrap()
                .sum_axis(Axis(1));
            let gx = matmul(self.w.view(), gcols.view())
                .into_shape_with_order((self.in_c, h, w))
                .unwrap();
            (gx, gw, gb)
        });
        let mut gx = Tensor4::zeros(x.raw_dim());
        for (i, (gxi, gwi, gbi)) in parts.into_iter().enumerate() {
            gx.index_axis_mut(Axis(0), i).assign(&gxi);
            self.gw += &gwi;
            self.gb += &gbi;
        }
        gx
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
                vec![self.in_c, self.out_c, self.k, self.k],
                self.w.iter().copied().collect(),
            ),
            TensorEntry::new(format!("{prefix}.b"), vec![self.out_c], self.b.to_vec()),
        ]
    }

    pub fn load(&mut self, prefix: &str, entries: &mut super::super::checkpoint::EntryMap) -> crate::Result<()> {
        entries.take_into(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap())?;
        entries.take_into(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap())?;
        Ok(())
    }
}
