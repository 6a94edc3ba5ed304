//! Preprocessing chain for multispectral leaf acquisitions: hot-pixel
//! removal, reflectance calibration against Spectralon probes, skeleton
//! extraction from the NIR band, resizing to the training resolution and
//! geometric augmentation of (skeleton, target) pairs.

use std::collections::BTreeMap;
use std::f32::consts::FRAC_PI_4;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::exec;
use crate::morphology;
use crate::raster::{ChannelLabel, ColorMode, PairedSample, SkeletonMask, SpectralImage};
use crate::seed;

/// Known Spectralon reflectances imaged alongside every leaf.
pub const PROBE_REFLECTANCES: [f32; 3] = [0.02, 0.50, 0.99];

/// Default hot-pixel test factor.
pub const DEFAULT_HOT_PIXEL_K: f32 = 1.5;

/// Reflectance references: three probes of known reflectance and the mean
/// pixel intensity measured over each probe region, per channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectanceProbeSet {
    pub known_reflectances: [f32; 3],
    /// Measured mean intensities keyed by wavelength (nm), three per channel.
    pub measured_intensities: BTreeMap<u32, [f32; 3]>,
}

impl ReflectanceProbeSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.known_reflectances[0] < self.known_reflectances[1]
            && self.known_reflectances[1] < self.known_reflectances[2])
        {
            return Err(Error::DegenerateProbes {
                channel: "known".into(),
            });
        }
        for (nm, m) in &self.measured_intensities {
            if !(m[0] < m[1] && m[1] < m[2]) {
                return Err(Error::DegenerateProbes {
                    channel: nm.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Replace every pixel exceeding `k` times the median of its 3x3
/// neighborhood (border-replicated) by that median. Never increases a pixel.
pub fn remove_hot_pixels(img: &SpectralImage, k: f32) -> SpectralImage {
    assert!(k > 1.0, "hot-pixel factor must exceed 1");
    let (c, h, w) = img.pixels.dim();
    let mut out = img.pixels.clone();
    for ch in 0..c {
        let plane = img.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
        let med = morphology::median3x3(&plane);
        for y in 0..h {
            for x in 0..w {
                if plane[[y, x]] > k * med[[y, x]] {
                    out[[ch, y, x]] = med[[y, x]];
                }
            }
        }
    }
    SpectralImage {
        pixels: out,
        channel_labels: img.channel_labels.clone(),
        source_id: img.source_id.clone(),
    }
}

/// Least-squares affine fit intensity -> reflectance through the three
/// (measured, known) pairs. Returns (slope, intercept).
pub fn fit_probe_affine(measured: &[f64; 3], known: &[f64; 3]) -> (f64, f64) {
    let n = 3.0f64;
    let sx: f64 = measured.iter().sum();
    let sy: f64 = known.iter().sum();
    let sxx: f64 = measured.iter().map(|&v| v * v).sum();
    let sxy: f64 = measured.iter().zip(known).map(|(&m, &k)| m * k).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Apply per-channel affine reflectance calibration and clip to `[0, 1]`.
pub fn calibrate_reflectance(img: &SpectralImage, probes: &ReflectanceProbeSet) -> Result<SpectralImage> {
    probes.validate()?;
    let mut out = img.pixels.clone();
    for (ch, label) in img.channel_labels.iter().enumerate() {
        let nm = label.wavelength_nm();
        let measured = probes
            .measured_intensities
            .get(&nm)
            .ok_or_else(|| Error::Dataset {
                source_id: img.source_id.clone(),
                message: format!("no probe intensities for channel {nm} nm"),
            })?;
        let measured64 = measured.map(f64::from);
        let known64 = probes.known_reflectances.map(f64::from);
        let (slope, intercept) = fit_probe_affine(&measured64, &known64);
        let (slope, intercept) = (slope as f32, intercept as f32);
        out.index_axis_mut(ndarray::Axis(0), ch)
            .mapv_inplace(|v| (slope * v + intercept).clamp(0.0, 1.0));
    }
    Ok(SpectralImage {
        pixels: out,
        channel_labels: img.channel_labels.clone(),
        source_id: img.source_id.clone(),
    })
}

/// Extract the companion skeleton from a calibrated single-channel NIR
/// image: Otsu threshold isolates the leaf region, the profile is the
/// region minus its erosion, veins are black-top-hat responses inside the
/// region thresholded at the Otsu level of the response.
pub fn extract_skeleton(nir: &SpectralImage) -> Result<SkeletonMask> {
    assert_eq!(nir.channels(), 1, "extract_skeleton expects one NIR channel");
    let plane = nir.pixels.index_axis(ndarray::Axis(0), 0).to_owned();
    let thr = morphology::otsu_threshold(plane.iter().copied()).ok_or_else(|| Error::EmptyLeafRegion {
        source_id: nir.source_id.clone(),
    })?;
    let mut region = plane.mapv(|v| (v >= thr) as u8);
    if region.iter().all(|&v| v == 0) {
        return Err(Error::EmptyLeafRegion {
            source_id: nir.source_id.clone(),
        });
    }
    // Dark veins fall below the leaf/background threshold and would carve
    // thin slits out of the region; a binary closing fills them so the
    // region is the whole blade.
    region = morphology::binary_erode3x3(&morphology::binary_dilate3x3(&region));
    // Keep the dominant region; stray bright specks are not the leaf.
    region = crate::components::refine(&region).map_err(|_| Error::EmptyLeafRegion {
        source_id: nir.source_id.clone(),
    })?;
    let profile = morphology::boundary(&region);

    // Veins: dark thin structures inside the (eroded) region.
    let interior = morphology::binary_erode3x3(&region);
    let tophat = morphology::black_tophat3x3(&plane);
    let responses: Vec<f32> = tophat
        .indexed_iter()
        .filter(|((y, x), _)| interior[[*y, *x]] == 1)
        .map(|(_, &v)| v)
        .collect();
    let mut veins = Array2::<u8>::zeros(region.dim());
    if let Some(vthr) = morphology::otsu_threshold(responses.into_iter()) {
        if vthr > 0.0 {
            for ((y, x), v) in tophat.indexed_iter() {
                if interior[[y, x]] == 1 && *v >= vthr {
                    veins[[y, x]] = 1;
                }
            }
        }
    }

    let mut mask = profile;
    ndarray::Zip::from(&mut mask).and(&veins).for_each(|m, &v| {
        if v == 1 {
            *m = 1;
        }
    });
    Ok(SkeletonMask::new(mask, nir.source_id.clone()))
}

/// Center-aligned bilinear resize of one plane.
pub fn bilinear_resize(plane: &Array2<f32>, oh: usize, ow: usize) -> Array2<f32> {
    let (h, w) = plane.dim();
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let fy = (y as f32 + 0.5) * sy - 0.5;
            let fx = (x as f32 + 0.5) * sx - 0.5;
            out[[y, x]] = sample_bilinear(plane, fy, fx);
        }
    }
    out
}

fn sample_bilinear(plane: &Array2<f32>, fy: f32, fx: f32) -> f32 {
    let (h, w) = plane.dim();
    let y0 = fy.floor();
    let x0 = fx.floor();
    let dy = fy - y0;
    let dx = fx - x0;
    let get = |y: isize, x: isize| -> f32 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        plane[[y, x]]
    };
    let (y0, x0) = (y0 as isize, x0 as isize);
    let v00 = get(y0, x0);
    let v01 = get(y0, x0 + 1);
    let v10 = get(y0 + 1, x0);
    let v11 = get(y0 + 1, x0 + 1);
    v00 * (1.0 - dy) * (1.0 - dx) + v01 * (1.0 - dy) * dx + v10 * dy * (1.0 - dx) + v11 * dy * dx
}

/// Center-aligned nearest-neighbor resize of a binary mask, re-binarized.
pub fn nearest_resize_mask(mask: &Array2<u8>, oh: usize, ow: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let iy = (((y as f32 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
            let ix = (((x as f32 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
            out[[y, x]] = (mask[[iy, ix]] as f32 >= 0.5) as u8;
        }
    }
    out
}

/// Resize an image (bilinear) and its mask (nearest-neighbor, re-binarized)
/// to `size` x `size` and pair them.
pub fn resize_pair(img: &SpectralImage, mask: &SkeletonMask, size: usize) -> Result<PairedSample> {
    if img.height() != mask.height() || img.width() != mask.width() {
        return Err(Error::DimensionMismatch(
            img.height(),
            img.width(),
            mask.height(),
            mask.width(),
        ));
    }
    let mode = mode_for_labels(&img.channel_labels)?;
    let (c, _, _) = img.pixels.dim();
    let mut out = Array3::zeros((c, size, size));
    for ch in 0..c {
        let plane = img.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
        out.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&bilinear_resize(&plane, size, size));
    }
    let target = SpectralImage {
        pixels: out,
        channel_labels: img.channel_labels.clone(),
        source_id: img.source_id.clone(),
    };
    let skeleton = SkeletonMask::new(nearest_resize_mask(&mask.pixels, size, size), mask.source_id.clone());
    PairedSample::new(skeleton, target, mode)
}

fn mode_for_labels(labels: &[ChannelLabel]) -> Result<ColorMode> {
    if labels == ColorMode::Rgb.channels() {
        Ok(ColorMode::Rgb)
    } else if labels == ColorMode::Rgnir.channels() {
        Ok(ColorMode::Rgnir)
    } else {
        Err(Error::InvalidArgument(format!(
            "target channels {labels:?} match neither RGB nor RGNIR"
        )))
    }
}

/// One drawn geometric augmentation: both flips, a rotation angle in
/// `[-pi/4, pi/4]` and a zoom factor in `[0.8, 1.2]`, composed into a single
/// transform applied identically to skeleton and target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle: f32,
    pub zoom: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip_h: false,
        flip_v: false,
        angle: 0.0,
        zoom: 1.0,
    };

    pub fn draw(rng: &mut impl Rng) -> Self {
        AugmentParams {
            flip_h: rng.gen::<f32>() < 0.5,
            flip_v: rng.gen::<f32>() < 0.5,
            angle: rng.gen_range(-FRAC_PI_4..=FRAC_PI_4),
            zoom: rng.gen_range(0.8..=1.2),
        }
    }

    /// Map an output pixel center back to its source coordinate (the
    /// inverse of flip -> rotate -> zoom about the image center).
    fn source_coord(&self, y: f32, x: f32, cy: f32, cx: f32) -> (f32, f32) {
        let mut dy = (y - cy) / self.zoom;
        let mut dx = (x - cx) / self.zoom;
        let (s, c) = self.angle.sin_cos();
        let ry = dy * c - dx * s;
        let rx = dy * s + dx * c;
        dy = ry;
        dx = rx;
        if self.flip_v {
            dy = -dy;
        }
        if self.flip_h {
            dx = -dx;
        }
        (cy + dy, cx + dx)
    }

    pub fn is_identity(&self) -> bool {
        !self.flip_h && !self.flip_v && self.angle == 0.0 && self.zoom == 1.0
    }
}

/// Apply a drawn transform to a sample. Image channels are resampled
/// bilinearly, the mask with nearest-neighbor plus re-binarization; pixels
/// pulled from outside the frame become background 0.
pub fn apply_augment(sample: &PairedSample, params: &AugmentParams) -> PairedSample {
    if params.is_identity() {
        return sample.clone();
    }
    let (c, h, w) = sample.target.pixels.dim();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;

    let mut img = Array3::zeros((c, h, w));
    let mut mask = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = params.source_coord(y as f32, x as f32, cy, cx);
            if sy < -0.5 || sy > h as f32 - 0.5 || sx < -0.5 || sx > w as f32 - 0.5 {
                continue; // background fill 0
            }
            for ch in 0..c {
                let plane = sample.target.pixels.index_axis(ndarray::Axis(0), ch);
                img[[ch, y, x]] = sample_bilinear(&plane.to_owned(), sy, sx);
            }
            let iy = sy.round().clamp(0.0, h as f32 - 1.0) as usize;
            let ix = sx.round().clamp(0.0, w as f32 - 1.0) as usize;
            mask[[y, x]] = (sample.skeleton.pixels[[iy, ix]] as f32 >= 0.5) as u8;
        }
    }
    PairedSample {
        skeleton: SkeletonMask::new(mask, sample.skeleton.source_id.clone()),
        target: SpectralImage {
            pixels: img,
            channel_labels: sample.target.channel_labels.clone(),
            source_id: sample.target.source_id.clone(),
        },
        mode: sample.mode,
    }
}

/// Draw one transform from `rng` and apply it.
pub fn augment_pair(sample: &PairedSample, rng: &mut impl Rng) -> PairedSample {
    apply_augment(sample, &AugmentParams::draw(rng))
}

/// Per-sample record of how a dataset entry was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub source_id: String,
    pub augment: Option<AugmentParams>,
}

/// Manifest of a preprocessed dataset: enough to replay it exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: ColorMode,
    pub size: usize,
    pub seed: u64,
    pub augment_factor: usize,
    pub hot_pixel_k: f32,
    pub samples: Vec<SampleRecord>,
}

/// On-disk probe annotation sidecar (`<leaf_id>_probes.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeAnnotation {
    #[serde(default = "default_known")]
    pub known_reflectances: [f32; 3],
    pub measured_intensities: BTreeMap<u32, [f32; 3]>,
}

fn default_known() -> [f32; 3] {
    PROBE_REFLECTANCES
}

const SPECTRAL_LABELS: [ChannelLabel; 4] = [
    ChannelLabel::B,
    ChannelLabel::G,
    ChannelLabel::R,
    ChannelLabel::Nir,
];

/// Run the full preprocessing chain over an acquisition directory (one
/// subdirectory per leaf, one grayscale PNG per channel named
/// `<leaf_id>_<wavelength>.png`), then append `augment_factor - 1` augmented
/// copies per base sample. Deterministic for a fixed seed; output ordered by
/// sorted leaf id.
pub fn build_dataset(
    image_dir: &Path,
    mode: ColorMode,
    augment_factor: usize,
    size: usize,
    seed: u64,
    hot_pixel_k: f32,
) -> Result<(Vec<PairedSample>, DatasetManifest)> {
    assert!(augment_factor >= 1);
    let mut leaf_dirs: Vec<_> = std::fs::read_dir(image_dir)
        .map_err(|e| Error::io(image_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    leaf_dirs.sort();
    if leaf_dirs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let base: Vec<Result<PairedSample>> =
        exec::map_slice(&leaf_dirs, |dir| preprocess_leaf(dir, mode, size, hot_pixel_k));
    let base: Vec<PairedSample> = base.into_iter().collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(base.len() * augment_factor);
    let mut records = Vec::new();
    for (i, s) in base.iter().enumerate() {
        samples.push(s.clone());
        records.push(SampleRecord {
            id: format!("{}_a0", s.skeleton.source_id),
            source_id: s.skeleton.source_id.clone(),
            augment: None,
        });
        for a in 1..augment_factor {
            let mut rng = seed::rng_indexed(seed, "augment", (i * augment_factor + a) as u64);
            let params = AugmentParams::draw(&mut rng);
            samples.push(apply_augment(s, &params));
            records.push(SampleRecord {
                id: format!("{}_a{}", s.skeleton.source_id, a),
                source_id: s.skeleton.source_id.clone(),
                augment: Some(params),
            });
        }
    }
    let manifest = DatasetManifest {
        mode,
        size,
        seed,
        augment_factor,
        hot_pixel_k,
        samples: records,
    };
    Ok((samples, manifest))
}

/// Preprocess one leaf directory: load channels, remove hot pixels,
/// calibrate if probe annotations are present, extract the skeleton from
/// NIR, composite the target for `mode` and resize both to `size`.
pub fn preprocess_leaf(leaf_dir: &Path, mode: ColorMode, size: usize, hot_pixel_k: f32) -> Result<PairedSample> {
    let leaf_id = leaf_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut planes = Vec::new();
    let mut dims = None;
    for label in SPECTRAL_LABELS {
        let path = leaf_dir.join(format!("{leaf_id}_{}.png", label.wavelength_nm()));
        if !path.exists() {
            return Err(Error::Dataset {
                source_id: leaf_id.clone(),
                message: format!("missing channel file {}", path.display()),
            });
        }
        let img = crate::raster::load_spectral_image(&path, &[label])?;
        let d = (img.height(), img.width());
        if *dims.get_or_insert(d) != d {
            return Err(Error::Dataset {
                source_id: leaf_id.clone(),
                message: "channel files disagree on dimensions".into(),
            });
        }
        planes.push(img.pixels.index_axis(ndarray::Axis(0), 0).to_owned());
    }
    let (h, w) = dims.unwrap();
    let mut pixels = Array3::zeros((4, h, w));
    for (i, p) in planes.into_iter().enumerate() {
        pixels.index_axis_mut(ndarray::Axis(0), i).assign(&p);
    }
    let mut img = SpectralImage::new(pixels, SPECTRAL_LABELS.to_vec(), leaf_id.clone())?;

    img = remove_hot_pixels(&img, hot_pixel_k);

    let probes_path = leaf_dir.join(format!("{leaf_id}_probes.json"));
    if probes_path.exists() {
        let text = std::fs::read_to_string(&probes_path).map_err(|e| Error::io(&probes_path, e))?;
        let ann: ProbeAnnotation = serde_json::from_str(&text).map_err(|e| Error::Dataset {
            source_id: leaf_id.clone(),
            message: format!("bad probe annotation: {e}"),
        })?;
        let probes = ReflectanceProbeSet {
            known_reflectances: ann.known_reflectances,
            measured_intensities: ann.measured_intensities,
        };
        img = calibrate_reflectance(&img, &probes)?;
    }

    let nir = img.channel(ChannelLabel::Nir).ok_or_else(|| Error::Dataset {
        source_id: leaf_id.clone(),
        message: "missing NIR channel".into(),
    })?;
    let skeleton = extract_skeleton(&nir)?;

    let labels = mode.channels();
    let mut target_px = Array3::zeros((3, h, w));
    for (i, label) in labels.iter().enumerate() {
        let idx = img.channel_labels.iter().position(|l| l == label).unwrap();
        target_px
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&img.pixels.index_axis(ndarray::Axis(0), idx));
    }
    let target = SpectralImage::new(target_px, labels.to_vec(), leaf_id)?;
    resize_pair(&target, &skeleton, size)
}

/// Number of connected foreground components (diagnostic helper used by the
/// toy pipelines and tests).
pub fn component_count(mask: &SkeletonMask) -> usize {
    label_components(&mask.pixels, Connectivity::Eight).component_count
}

pub const DATASET_MANIFEST_FILE: &str = "dataset.json";

/// Write a paired dataset to `dir`: `<id>_skel.png` and `<id>_target.png`
/// per sample (ids from the manifest records) plus the dataset manifest.
/// Returns the paths written, in a deterministic order.
pub fn save_pairs(
    dir: &Path,
    samples: &[PairedSample],
    manifest: &DatasetManifest,
) -> Result<Vec<std::path::PathBuf>> {
    if samples.len() != manifest.samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} manifest records",
            samples.len(),
            manifest.samples.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (sample, record) in samples.iter().zip(&manifest.samples) {
        let skel_path = dir.join(format!("{}_skel.png", record.id));
        crate::raster::save_mask(&sample.skeleton, &skel_path)?;
        let target_path = dir.join(format!("{}_target.png", record.id));
        crate::raster::save_spectral_image(&sample.target, &target_path)?;
        written.push(skel_path);
        written.push(target_path);
    }
    let manifest_path = dir.join(DATASET_MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}

/// Read back a dataset written by `save_pairs`, in manifest order.
pub fn load_pairs(dir: &Path) -> Result<(Vec<PairedSample>, DatasetManifest)> {
    let manifest_path = dir.join(DATASET_MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Dataset {
        source_id: dir.display().to_string(),
        message: format!("bad dataset manifest: {e}"),
    })?;
    let labels = manifest.mode.channels();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for record in &manifest.samples {
        let mut skeleton = crate::raster::load_mask(&dir.join(format!("{}_skel.png", record.id)))?;
        skeleton.source_id = record.id.clone();
        let mut target =
            crate::raster::load_spectral_image(&dir.join(format!("{}_target.png", record.id)), &labels)?;
        target.source_id = record.id.clone();
        samples.push(PairedSample::new(skeleton, target, manifest.mode)?);
    }
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn constant_image(v: f32, h: usize, w: usize) -> SpectralImage {
        SpectralImage::new(
            Array3::from_elem((1, h, w), v),
            vec![ChannelLabel::Nir],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn hot_pixels_uniform_unchanged() {
        let img = constant_image(0.4, 8, 8);
        let out = remove_hot_pixels(&img, 1.5);
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn hot_pixel_single_spike_replaced() {
        let mut img = constant_image(0.1, 9, 9);
        img.pixels[[0, 4, 4]] = 1.0;
        let out = remove_hot_pixels(&img, 1.5);
        assert_abs_diff_eq!(out.pixels[[0, 4, 4]], 0.1, epsilon = 1e-6);
        assert_abs_diff_eq!(out.pixels[[0, 4, 5]], 0.1, epsilon = 1e-6);
    }

    #[test]
    fn hot_pixel_two_spikes_neighbors_untouched() {
        let mut img = constant_image(0.2, 12, 12);
        img.pixels[[0, 2, 2]] = 0.9;
        img.pixels[[0, 8, 9]] = 0.95;
        let out = remove_hot_pixels(&img, 1.5);
        // Brute-force oracle: median filter over the original.
        let plane = img.pixels.index_axis(ndarray::Axis(0), 0).to_owned();
        let med = morphology::median3x3(&plane);
        for ((y, x), &v) in plane.indexed_iter() {
            let expect = if v > 1.5 * med[[y, x]] { med[[y, x]] } else { v };
            assert_abs_diff_eq!(out.pixels[[0, y, x]], expect, epsilon = 1e-7);
        }
    }

    #[test]
    fn hot_pixel_never_increases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut img = constant_image(0.0, 16, 16);
        img.pixels.mapv_inplace(|_| rng.gen::<f32>());
        let out = remove_hot_pixels(&img, 1.2);
        for (a, b) in out.pixels.iter().zip(img.pixels.iter()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn hot_pixel_idempotent_on_fixture() {
        let mut img = constant_image(0.1, 9, 9);
        img.pixels[[0, 4, 4]] = 1.0;
        let once = remove_hot_pixels(&img, 1.5);
        let twice = remove_hot_pixels(&once, 1.5);
        assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn calibration_identity_when_measured_equals_known() {
        let img = constant_image(0.5, 4, 4);
        let probes = ReflectanceProbeSet {
            known_reflectances: PROBE_REFLECTANCES,
            measured_intensities: [(740u32, PROBE_REFLECTANCES)].into_iter().collect(),
        };
        let out = calibrate_reflectance(&img, &probes).unwrap();
        assert_abs_diff_eq!(out.pixels[[0, 0, 0]], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn calibration_recovers_affine_distortion() {
        // measured = 0.5 * known + 0.1, so the fitted map is x -> 2(x - 0.1).
        let known = PROBE_REFLECTANCES.map(f64::from);
        let measured = known.map(|k| 0.5 * k + 0.1);
        let (slope, intercept) = fit_probe_affine(&measured, &known);
        assert_abs_diff_eq!(slope, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(intercept, -0.2, epsilon = 1e-9);
    }

    #[test]
    fn calibration_rejects_degenerate_probes() {
        let img = constant_image(0.5, 4, 4);
        let probes = ReflectanceProbeSet {
            known_reflectances: PROBE_REFLECTANCES,
            measured_intensities: [(740u32, [0.5, 0.4, 0.9])].into_iter().collect(),
        };
        assert!(matches!(
            calibrate_reflectance(&img, &probes),
            Err(Error::DegenerateProbes { .. })
        ));
    }

    #[test]
    fn skeleton_blank_image_errors() {
        let img = constant_image(0.0, 16, 16);
        assert!(matches!(
            extract_skeleton(&img),
            Err(Error::EmptyLeafRegion { .. })
        ));
    }

    #[test]
    fn skeleton_of_disk_is_boundary_ring() {
        let n = 32usize;
        let mut img = constant_image(0.05, n, n);
        let c = n as f32 / 2.0;
        for y in 0..n {
            for x in 0..n {
                let d = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt();
                if d < 10.0 {
                    img.pixels[[0, y, x]] = 0.9;
                }
            }
        }
        let mask = extract_skeleton(&img).unwrap();
        // Independent boundary oracle: foreground pixel with any background
        // 8-neighbor (or on the frame edge).
        let region = img.pixels.index_axis(ndarray::Axis(0), 0).mapv(|v| (v > 0.5) as u8);
        for ((y, x), &v) in mask.pixels.indexed_iter() {
            let mut is_boundary = false;
            if region[[y, x]] == 1 {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let yy = y as isize + dy;
                        let xx = x as isize + dx;
                        if yy < 0 || yy >= n as isize || xx < 0 || xx >= n as isize {
                            is_boundary = true;
                        } else if region[[yy as usize, xx as usize]] == 0 {
                            is_boundary = true;
                        }
                    }
                }
            }
            assert_eq!(v == 1, is_boundary, "pixel ({y},{x})");
        }
    }

    #[test]
    fn skeleton_finds_dark_midrib() {
        let n = 48usize;
        let mut img = constant_image(0.05, n, n);
        for y in 8..40 {
            for x in 8..40 {
                img.pixels[[0, y, x]] = 0.85;
            }
        }
        for x in 10..38 {
            img.pixels[[0, 24, x]] = 0.35; // midrib darker than blade
        }
        let mask = extract_skeleton(&img).unwrap();
        let mid_hits = (12..36).filter(|&x| mask.pixels[[24, x]] == 1).count();
        assert!(mid_hits >= 20, "midrib mostly detected, got {mid_hits}");
        assert_eq!(mask.pixels[[8, 8]], 1, "corner of boundary present");
    }

    fn toy_pair(n: usize) -> PairedSample {
        let mut mask = Array2::<u8>::zeros((n, n));
        for y in n / 4..3 * n / 4 {
            for x in n / 4..3 * n / 4 {
                mask[[y, x]] = 1;
            }
        }
        let img = SpectralImage::new(
            Array3::from_elem((3, n, n), 0.5),
            ColorMode::Rgb.channels().to_vec(),
            "t",
        )
        .unwrap();
        PairedSample::new(SkeletonMask::new(mask, "t"), img, ColorMode::Rgb).unwrap()
    }

    #[test]
    fn resize_identity() {
        let pair = toy_pair(16);
        let out = resize_pair(&pair.target, &pair.skeleton, 16).unwrap();
        assert_eq!(out.skeleton.pixels, pair.skeleton.pixels);
        assert_abs_diff_eq!(
            out.target.pixels[[0, 3, 5]],
            pair.target.pixels[[0, 3, 5]],
            epsilon = 1e-6
        );
    }

    #[test]
    fn resize_mask_stays_binary() {
        let pair = toy_pair(512);
        let out = resize_pair(&pair.target, &pair.skeleton, 256).unwrap();
        assert!(out.skeleton.is_binary());
        assert_eq!(out.skeleton.height(), 256);
    }

    #[test]
    fn resize_dimension_mismatch_rejected() {
        let pair = toy_pair(16);
        let small = SkeletonMask::new(Array2::zeros((8, 8)), "s");
        assert!(resize_pair(&pair.target, &small, 16).is_err());
    }

    #[test]
    fn augment_identity_params_are_noop() {
        let pair = toy_pair(16);
        let out = apply_augment(&pair, &AugmentParams::IDENTITY);
        assert_eq!(out.skeleton.pixels, pair.skeleton.pixels);
        assert_eq!(out.target.pixels, pair.target.pixels);
    }

    #[test]
    fn augment_draw_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let p = AugmentParams::draw(&mut rng);
            assert!(p.angle >= -FRAC_PI_4 && p.angle <= FRAC_PI_4);
            assert!(p.zoom >= 0.8 && p.zoom <= 1.2);
        }
    }

    #[test]
    fn augment_rotates_single_pixel_to_analytic_position() {
        let n = 33usize;
        let c = (n as f32 - 1.0) / 2.0;
        let mut mask = Array2::<u8>::zeros((n, n));
        let (py, px) = (16usize, 24usize); // offset (0, +8) from center
        mask[[py, px]] = 1;
        let img = SpectralImage::new(
            Array3::zeros((3, n, n)),
            ColorMode::Rgb.channels().to_vec(),
            "t",
        )
        .unwrap();
        let pair = PairedSample::new(SkeletonMask::new(mask, "t"), img, ColorMode::Rgb).unwrap();
        let angle = FRAC_PI_4;
        let out = apply_augment(
            &pair,
            &AugmentParams {
                flip_h: false,
                flip_v: false,
                angle,
                zoom: 1.0,
            },
        );
        // Forward-rotate the pixel offset analytically.
        let (s, co) = angle.sin_cos();
        let dy = (py as f32 - c) * co + (px as f32 - c) * s;
        let dx = -(py as f32 - c) * s + (px as f32 - c) * co;
        let (ey, ex) = (c + dy, c + dx);
        let hit = out
            .skeleton
            .pixels
            .indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|((y, x), _)| (y as f32 - ey).abs().max((x as f32 - ex).abs()))
            .fold(f32::INFINITY, f32::min);
        assert!(hit <= 1.0, "nearest foreground pixel {hit} px from analytic target");
    }

    #[test]
    fn augment_output_mask_binary_and_same_transform() {
        let pair = toy_pair(32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment_pair(&pair, &mut rng);
            assert!(out.skeleton.is_binary());
            assert_eq!(out.target.height(), 32);
        }
    }

    #[test]
    fn pairs_directory_round_trip() {
        let samples: Vec<PairedSample> = (0..3).map(|i| {
            let mut p = toy_pair(16);
            p.skeleton.source_id = format!("leaf{i}_a0");
            p.target.source_id = format!("leaf{i}_a0");
            p
        }).collect();
        let manifest = DatasetManifest {
            mode: ColorMode::Rgb,
            size: 16,
            seed: 7,
            augment_factor: 1,
            hot_pixel_k: DEFAULT_HOT_PIXEL_K,
            samples: (0..3)
                .map(|i| SampleRecord {
                    id: format!("leaf{i}_a0"),
                    source_id: format!("leaf{i}"),
                    augment: None,
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let written = save_pairs(dir.path(), &samples, &manifest).unwrap();
        assert_eq!(written.len(), 7); // 3 pairs + manifest
        let (back, back_manifest) = load_pairs(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back_manifest.samples[2].id, "leaf2_a0");
        assert_eq!(back_manifest.seed, 7);
        for (orig, got) in samples.iter().zip(&back) {
            // Masks round-trip exactly; targets are 8-bit quantized on disk.
            assert_eq!(orig.skeleton.pixels, got.skeleton.pixels);
            for (a, b) in orig.target.pixels.iter().zip(got.target.pixels.iter()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        // Mismatched lengths are rejected.
        assert!(save_pairs(dir.path(), &samples[..2], &manifest).is_err());
    }
}
