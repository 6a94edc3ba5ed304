//! Minimal CPU neural-network substrate: 2-D convolutions (forward and
//! transposed), batch normalization, dense layers, activations, dropout and
//! an Adam optimizer, all with explicit hand-written backward passes.
//!
//! Tensors are `ndarray` arrays in `(batch, channel, row, col)` layout.
//! Batched work fans out per sample through [`crate::exec`]; single-sample
//! GEMMs split over output-row chunks instead, so the same results fall out
//! of the parallel and sequential backends.

pub mod adam;
pub mod conv;
pub mod layers;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Tensor4 = ndarray::Array4<f32>;

/// One optimizable parameter buffer with its gradient accumulator.
pub struct ParamSlot<'a> {
    pub data: &'a mut [f32],
    pub grad: &'a mut [f32],
}

/// Named tensor for checkpoint serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorEntry {
            name: name.into(),
            shape,
            data,
        }
    }
}

/// Row-chunked matrix product. With the `parallel` feature the rows of `a`
/// are split across the rayon pool; each output row is still produced by a
/// single `dot`, so results are identical to the sequential product.
pub fn matmul(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    #[cfg(feature = "parallel")]
    {
        let m = a.nrows();
        let work = m * a.ncols() * b.ncols();
        let threads = rayon::current_num_threads().max(1);
        if threads > 1 && m >= 2 * threads && work > 1 << 16 {
            let chunk = m.div_ceil(threads);
            let parts: Vec<Array2<f32>> = crate::exec::map_indexed(m.div_ceil(chunk), |i| {
                let lo = i * chunk;
                let hi = (lo + chunk).min(m);
                a.slice(ndarray::s![lo..hi, ..]).dot(&b)
            });
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            return ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        }
    }
    a.dot(&b)
}

/// Fill a buffer with draws from `N(0, std^2)`.
pub fn init_normal(data: &mut [f32], std: f32, rng: &mut impl Rng) {
    let dist = Normal::new(0.0f32, std).unwrap();
    for v in data.iter_mut() {
        *v = dist.sample(rng);
    }
}

/// He-style initialization for a layer with the given fan-in.
pub fn init_he(data: &mut [f32], fan_in: usize, rng: &mut impl Rng) {
    init_normal(data, (2.0 / fan_in as f32).sqrt(), rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;

    #[test]
    fn chunked_matmul_matches_dot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = Array::from_shape_fn((64, 48), |_| rng.gen::<f32>());
        let b = Array::from_shape_fn((48, 80), |_| rng.gen::<f32>());
        let fast = matmul(a.view(), b.view());
        let slow = a.dot(&b);
        assert_eq!(fast, slow);
    }
}
