//! Procedural toy-leaf generator: desk-scale stand-in for the real
//! acquisition set. Draws randomized superellipse blades with a midrib and
//! branching veins, a smooth green-shaded fill with a distinct NIR band, and
//! the exact skeleton for each leaf.

use std::f32::consts::FRAC_PI_4;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::PROBE_REFLECTANCES;
use crate::error::{Error, Result};
use crate::exec;
use crate::morphology;
use crate::raster::{ChannelLabel, ColorMode, PairedSample, SkeletonMask, SpectralImage};
use crate::seed;

/// A generated toy leaf with its ground-truth geometry.
#[derive(Debug, Clone)]
pub struct ToyLeaf {
    /// Filled blade region.
    pub blade: Array2<u8>,
    /// Exact skeleton: blade boundary plus midrib and veins.
    pub skeleton: SkeletonMask,
    /// Four-band reflectance image (B, G, R, NIR), values in `[0, 1]`.
    pub reflectance: SpectralImage,
}

struct LeafShape {
    cy: f32,
    cx: f32,
    a: f32,
    b: f32,
    exponent: f32,
    angle: f32,
}

impl LeafShape {
    /// Blade coordinates of a pixel: (u along the midrib, v across it).
    fn local(&self, y: f32, x: f32) -> (f32, f32) {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        (dx * c + dy * s, -dx * s + dy * c)
    }

    fn inside(&self, y: f32, x: f32) -> bool {
        let (u, v) = self.local(y, x);
        (u / self.a).abs().powf(self.exponent) + (v / self.b).abs().powf(self.exponent) < 1.0
    }

    /// Global coordinates from blade coordinates.
    fn global(&self, u: f32, v: f32) -> (f32, f32) {
        let (s, c) = self.angle.sin_cos();
        (self.cy + u * s + v * c, self.cx + u * c - v * s)
    }
}

fn draw_segment(mask: &mut Array2<u8>, shape: &LeafShape, u0: f32, v0: f32, du: f32, dv: f32, len: f32) {
    let steps = (len / 0.4).ceil() as usize;
    for i in 0..=steps {
        let t = i as f32 * 0.4;
        if t > len {
            break;
        }
        let (u, v) = (u0 + du * t, v0 + dv * t);
        let (y, x) = shape.global(u, v);
        if !shape.inside(y, x) {
            break;
        }
        let (yi, xi) = (y.round() as isize, x.round() as isize);
        // Rounding can push a near-boundary point onto a pixel whose center
        // lies outside the blade; skip those but keep walking the vein.
        if !shape.inside(yi as f32, xi as f32) {
            continue;
        }
        if yi >= 0 && xi >= 0 && (yi as usize) < mask.dim().0 && (xi as usize) < mask.dim().1 {
            mask[[yi as usize, xi as usize]] = 1;
        }
    }
}

/// Generate one toy leaf. Deterministic per RNG state.
pub fn toy_leaf(size: usize, rng: &mut ChaCha8Rng, source_id: &str) -> ToyLeaf {
    let s = size as f32;
    let shape = LeafShape {
        cy: s / 2.0 + rng.gen_range(-0.03..0.03) * s,
        cx: s / 2.0 + rng.gen_range(-0.03..0.03) * s,
        a: rng.gen_range(0.30..0.40) * s,
        b: rng.gen_range(0.18..0.30) * s,
        exponent: rng.gen_range(1.6..3.0),
        angle: rng.gen_range(-FRAC_PI_4..FRAC_PI_4),
    };

    let mut blade = Array2::<u8>::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            blade[[y, x]] = shape.inside(y as f32, x as f32) as u8;
        }
    }

    // Veins: midrib along u, plus symmetric secondary veins with one level
    // of branching.
    let mut veins = Array2::<u8>::zeros((size, size));
    draw_segment(&mut veins, &shape, -shape.a, 0.0, 1.0, 0.0, 2.0 * shape.a);
    let n_secondary = rng.gen_range(3..6);
    let vein_angle = rng.gen_range(0.5..0.9f32);
    for i in 0..n_secondary {
        let u0 = -shape.a * 0.7 + (i as f32 + 0.5) / n_secondary as f32 * 1.5 * shape.a;
        for sgn in [1.0f32, -1.0] {
            let (du, dv) = (vein_angle.cos(), sgn * vein_angle.sin());
            draw_segment(&mut veins, &shape, u0, 0.0, du, dv, shape.b * 1.5);
            // short branch halfway along
            let t = shape.b * 0.6;
            let (bu, bv) = (u0 + du * t, dv * t);
            draw_segment(&mut veins, &shape, bu, bv, du * 0.3, dv * 1.2, shape.b * 0.5);
        }
    }

    let profile = morphology::boundary(&blade);
    let mut skel_px = profile;
    ndarray::Zip::from(&mut skel_px).and(&veins).for_each(|m, &v| {
        if v == 1 {
            *m = 1;
        }
    });
    let skeleton = SkeletonMask::new(skel_px, source_id.to_string());

    // Reflectance fill: smooth shading inside the blade, dark background,
    // veins darker than the blade in G and NIR.
    let green_base = rng.gen_range(0.40..0.52f32);
    let nir_base = rng.gen_range(0.72..0.85f32);
    let mut px = Array3::<f32>::zeros((4, size, size));
    for y in 0..size {
        for x in 0..size {
            if blade[[y, x]] == 0 {
                continue;
            }
            let (u, v) = shape.local(y as f32, x as f32);
            let shade = 1.0 - 0.4 * ((u / shape.a).powi(2) + (v / shape.b).powi(2));
            let vein = veins[[y, x]] == 1;
            let b = 0.10 + 0.05 * shade;
            let g = (green_base + 0.22 * shade) * if vein { 0.55 } else { 1.0 };
            let r = 0.16 + 0.08 * shade;
            let nir = (nir_base + 0.12 * shade) * if vein { 0.45 } else { 1.0 };
            px[[0, y, x]] = b.clamp(0.0, 1.0);
            px[[1, y, x]] = g.clamp(0.0, 1.0);
            px[[2, y, x]] = r.clamp(0.0, 1.0);
            px[[3, y, x]] = nir.clamp(0.0, 1.0);
        }
    }
    let reflectance = SpectralImage::new(
        px,
        vec![ChannelLabel::B, ChannelLabel::G, ChannelLabel::R, ChannelLabel::Nir],
        source_id.to_string(),
    )
    .unwrap();

    ToyLeaf {
        blade,
        skeleton,
        reflectance,
    }
}

/// Composite the 3-channel target for `mode` out of the 4-band reflectance.
pub fn composite_target(reflectance: &SpectralImage, mode: ColorMode) -> SpectralImage {
    let labels = mode.channels();
    let (_, h, w) = reflectance.pixels.dim();
    let mut px = Array3::zeros((3, h, w));
    for (i, label) in labels.iter().enumerate() {
        let idx = reflectance.channel_labels.iter().position(|l| l == label).unwrap();
        px.index_axis_mut(ndarray::Axis(0), i)
            .assign(&reflectance.pixels.index_axis(ndarray::Axis(0), idx));
    }
    SpectralImage::new(px, labels.to_vec(), reflectance.source_id.clone()).unwrap()
}

fn check_size(size: usize) -> Result<()> {
    if size < 32 || !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "toy dataset size must be a power of two >= 32, got {size}"
        )));
    }
    Ok(())
}

/// Generate `n` toy leaves with exact skeletons. Deterministic per seed;
/// leaves are independent and generated in parallel.
pub fn generate_toy_dataset(n: usize, size: usize, seed: u64, mode: ColorMode) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("toy dataset needs n >= 1".into()));
    }
    check_size(size)?;
    Ok(exec::map_indexed(n, |i| {
        let leaf = generate_toy_leaf(size, seed, i);
        let target = composite_target(&leaf.reflectance, mode);
        PairedSample::new(leaf.skeleton, target, mode).unwrap()
    }))
}

/// Generate the `index`-th leaf of a toy dataset, with its geometry.
pub fn generate_toy_leaf(size: usize, seed: u64, index: usize) -> ToyLeaf {
    let mut rng = seed::rng_indexed(seed, "toy", index as u64);
    toy_leaf(size, &mut rng, &format!("toy_{index:04}"))
}

/// Materialize a toy acquisition directory in the real input layout (one
/// subdirectory per leaf with per-wavelength grayscale PNGs and a probe
/// annotation), so the full preprocessing chain can run against it. The
/// written intensities are an affine distortion of the reflectances
/// (`measured = gain * R + offset`), recorded in the probe sidecar.
pub fn write_toy_input_dir(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    check_size(size)?;
    let (gain, offset) = (0.8f32, 0.05f32);
    for i in 0..n {
        let leaf = generate_toy_leaf(size, seed, i);
        let id = format!("toy_{i:04}");
        let leaf_dir = dir.join(&id);
        std::fs::create_dir_all(&leaf_dir).map_err(|e| Error::io(&leaf_dir, e))?;
        let mut measured = std::collections::BTreeMap::new();
        for (c, label) in leaf.reflectance.channel_labels.iter().enumerate() {
            let plane = leaf
                .reflectance
                .pixels
                .index_axis(ndarray::Axis(0), c)
                .mapv(|v| (gain * v + offset).clamp(0.0, 1.0));
            let (h, w) = plane.dim();
            let img = SpectralImage::new(
                plane.into_shape_with_order((1, h, w)).unwrap(),
                vec![*label],
                id.clone(),
            )?;
            let path = leaf_dir.join(format!("{id}_{}.png", label.wavelength_nm()));
            crate::raster::save_spectral_image(&img, &path)?;
            measured.insert(
                label.wavelength_nm(),
                PROBE_REFLECTANCES.map(|r| gain * r + offset),
            );
        }
        let probes = crate::dataset::ProbeAnnotation {
            known_reflectances: PROBE_REFLECTANCES,
            measured_intensities: measured,
        };
        let path = leaf_dir.join(format!("{id}_probes.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&probes).unwrap())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_contained_in_blade() {
        let leaf = generate_toy_leaf(64, 11, 0);
        for ((y, x), &v) in leaf.skeleton.pixels.indexed_iter() {
            if v == 1 {
                assert_eq!(leaf.blade[[y, x]], 1, "skeleton escapes blade at ({y},{x})");
            }
        }
        assert!(leaf.skeleton.foreground_count() > 50);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_toy_dataset(4, 32, 5, ColorMode::Rgb).unwrap();
        let b = generate_toy_dataset(4, 32, 5, ColorMode::Rgb).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_dataset(4, 32, 6, ColorMode::Rgb).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sizes_and_invariants() {
        let data = generate_toy_dataset(3, 64, 9, ColorMode::Rgnir).unwrap();
        assert_eq!(data.len(), 3);
        for s in &data {
            assert!(s.skeleton.is_binary());
            assert_eq!(s.target.channels(), 3);
            assert_eq!(s.target.channel_labels, ColorMode::Rgnir.channels());
            assert!(s.target.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rejects_bad_size() {
        assert!(generate_toy_dataset(1, 48, 0, ColorMode::Rgb).is_err());
        assert!(generate_toy_dataset(1, 16, 0, ColorMode::Rgb).is_err());
        assert!(generate_toy_dataset(0, 64, 0, ColorMode::Rgb).is_err());
    }
}
