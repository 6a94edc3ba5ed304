//! Core raster types: multispectral images, binary skeleton masks and
//! paired training samples, plus 8-bit PNG I/O.

use std::fmt;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A spectral band. The multispectral acquisitions carry four narrow bands
/// (blue 430 nm, green 530 nm, red 685 nm, near-infrared 740 nm); plain RGB
/// references use the same labels without the NIR band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelLabel {
    B,
    G,
    R,
    Nir,
}

impl ChannelLabel {
    /// Center wavelength in nanometers for the multispectral bands.
    pub fn wavelength_nm(self) -> u32 {
        match self {
            ChannelLabel::B => 430,
            ChannelLabel::G => 530,
            ChannelLabel::R => 685,
            ChannelLabel::Nir => 740,
        }
    }

    pub fn from_wavelength_nm(nm: u32) -> Option<Self> {
        match nm {
            430 => Some(ChannelLabel::B),
            530 => Some(ChannelLabel::G),
            685 => Some(ChannelLabel::R),
            740 => Some(ChannelLabel::Nir),
            _ => None,
        }
    }
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelLabel::B => write!(f, "B"),
            ChannelLabel::G => write!(f, "G"),
            ChannelLabel::R => write!(f, "R"),
            ChannelLabel::Nir => write!(f, "NIR"),
        }
    }
}

/// Channel composition of a colorized target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Rgb,
    Rgnir,
}

impl ColorMode {
    pub fn channels(self) -> [ChannelLabel; 3] {
        match self {
            ColorMode::Rgb => [ChannelLabel::R, ChannelLabel::G, ChannelLabel::B],
            ColorMode::Rgnir => [ChannelLabel::R, ChannelLabel::G, ChannelLabel::Nir],
        }
    }
}

impl fmt::Display for ColorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColorMode::Rgb => write!(f, "rgb"),
            ColorMode::Rgnir => write!(f, "rgnir"),
        }
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorMode::Rgb),
            "rgnir" => Ok(ColorMode::Rgnir),
            other => Err(Error::InvalidArgument(format!("unknown color mode {other:?}"))),
        }
    }
}

/// Multi-channel floating-point raster with values in `[0, 1]`.
/// Layout is `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub pixels: Array3<f32>,
    pub channel_labels: Vec<ChannelLabel>,
    pub source_id: String,
}

impl SpectralImage {
    pub fn new(pixels: Array3<f32>, channel_labels: Vec<ChannelLabel>, source_id: impl Into<String>) -> Result<Self> {
        if pixels.shape()[0] != channel_labels.len() {
            return Err(Error::ChannelCountMismatch {
                expected: channel_labels.len(),
                found: pixels.shape()[0],
            });
        }
        for (i, a) in channel_labels.iter().enumerate() {
            if channel_labels[i + 1..].contains(a) {
                return Err(Error::DuplicateChannelLabel(a.to_string()));
            }
        }
        Ok(SpectralImage {
            pixels,
            channel_labels,
            source_id: source_id.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Extract one band as a single-channel image.
    pub fn channel(&self, label: ChannelLabel) -> Option<SpectralImage> {
        let idx = self.channel_labels.iter().position(|&l| l == label)?;
        let plane = self.pixels.index_axis(ndarray::Axis(0), idx).to_owned();
        let (h, w) = plane.dim();
        Some(SpectralImage {
            pixels: plane.into_shape_with_order((1, h, w)).unwrap(),
            channel_labels: vec![label],
            source_id: self.source_id.clone(),
        })
    }
}

/// Binary raster: foreground 1 marks the leaf profile and veins, background 0
/// everything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonMask {
    pub pixels: Array2<u8>,
    pub source_id: String,
}

impl SkeletonMask {
    pub fn new(pixels: Array2<u8>, source_id: impl Into<String>) -> Self {
        debug_assert!(pixels.iter().all(|&v| v <= 1));
        SkeletonMask {
            pixels,
            source_id: source_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0 || v == 1)
    }

    /// View as a float raster in `{0.0, 1.0}`.
    pub fn to_f32(&self) -> Array2<f32> {
        self.pixels.mapv(|v| v as f32)
    }
}

/// One training pair: skeleton conditioning input plus colorized target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub skeleton: SkeletonMask,
    pub target: SpectralImage,
    pub mode: ColorMode,
}

impl PairedSample {
    pub fn new(skeleton: SkeletonMask, target: SpectralImage, mode: ColorMode) -> Result<Self> {
        if skeleton.height() != target.height() || skeleton.width() != target.width() {
            return Err(Error::DimensionMismatch(
                skeleton.height(),
                skeleton.width(),
                target.height(),
                target.width(),
            ));
        }
        Ok(PairedSample { skeleton, target, mode })
    }
}

/// Load an 8-bit grayscale or RGB PNG and map samples linearly to `[0, 1]`.
pub fn load_spectral_image(path: &Path, channel_labels: &[ChannelLabel]) -> Result<SpectralImage> {
    let dynimg = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let found_channels = dynimg.color().channel_count() as usize;
    if dynimg.color().bits_per_pixel() as usize != 8 * found_channels {
        return Err(Error::UnsupportedBitDepth(format!("{:?}", dynimg.color())));
    }
    if found_channels != channel_labels.len() {
        return Err(Error::ChannelCountMismatch {
            expected: channel_labels.len(),
            found: found_channels,
        });
    }
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let mut pixels = Array3::<f32>::zeros((found_channels, h, w));
    match found_channels {
        1 => {
            let gray = dynimg.to_luma8();
            for (x, y, p) in gray.enumerate_pixels() {
                pixels[[0, y as usize, x as usize]] = p.0[0] as f32 / 255.0;
            }
        }
        3 => {
            let rgb = dynimg.to_rgb8();
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    pixels[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
                }
            }
        }
        n => {
            return Err(Error::ChannelCountMismatch {
                expected: channel_labels.len(),
                found: n,
            })
        }
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SpectralImage::new(pixels, channel_labels.to_vec(), source_id)
}

/// Save a 1- or 3-channel image as an 8-bit PNG (values clamped to `[0, 1]`,
/// then rounded to the nearest of 256 levels).
pub fn save_spectral_image(img: &SpectralImage, path: &Path) -> Result<()> {
    let (c, h, w) = img.pixels.dim();
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = match c {
        1 => {
            let mut buf = image::GrayImage::new(w as u32, h as u32);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                p.0[0] = quant(img.pixels[[0, y as usize, x as usize]]);
            }
            buf.save(path)
        }
        3 => {
            let mut buf = image::RgbImage::new(w as u32, h as u32);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                for ch in 0..3 {
                    p.0[ch] = quant(img.pixels[[ch, y as usize, x as usize]]);
                }
            }
            buf.save(path)
        }
        n => {
            return Err(Error::ChannelCountMismatch {
                expected: 3,
                found: n,
            })
        }
    };
    result.map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Save a skeleton mask as an 8-bit binary PNG (foreground 255).
pub fn save_mask(mask: &SkeletonMask, path: &Path) -> Result<()> {
    let (h, w) = mask.pixels.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0[0] = if mask.pixels[[y as usize, x as usize]] == 1 { 255 } else { 0 };
    }
    buf.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load a binary PNG written by [`save_mask`]; any sample ≥ 128 is foreground.
pub fn load_mask(path: &Path) -> Result<SkeletonMask> {
    let dynimg = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = dynimg.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut pixels = Array2::<u8>::zeros((h, w));
    for (x, y, p) in gray.enumerate_pixels() {
        pixels[[y as usize, x as usize]] = (p.0[0] >= 128) as u8;
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SkeletonMask::new(pixels, source_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn rejects_duplicate_labels() {
        let px = Array3::zeros((2, 4, 4));
        let err = SpectralImage::new(px, vec![ChannelLabel::R, ChannelLabel::R], "x");
        assert!(matches!(err, Err(Error::DuplicateChannelLabel(_))));
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let px = Array3::zeros((2, 4, 4));
        let err = SpectralImage::new(px, vec![ChannelLabel::R], "x");
        assert!(matches!(err, Err(Error::ChannelCountMismatch { .. })));
    }

    #[test]
    fn load_zero_image_and_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.png");
        let mut buf = image::RgbImage::new(5, 4);
        buf.put_pixel(2, 1, image::Rgb([255, 0, 128]));
        buf.save(&path).unwrap();
        let labels = [ChannelLabel::R, ChannelLabel::G, ChannelLabel::B];
        let img = load_spectral_image(&path, &labels).unwrap();
        assert_eq!(img.pixels.dim(), (3, 4, 5));
        assert_eq!(img.pixels[[0, 1, 2]], 1.0);
        assert_eq!(img.pixels[[1, 1, 2]], 0.0);
        assert_eq!(img.pixels[[0, 0, 0]], 0.0);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut px = Array2::<u8>::zeros((8, 8));
        px[[3, 4]] = 1;
        px[[0, 0]] = 1;
        let mask = SkeletonMask::new(px, "m");
        save_mask(&mask, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(mask.pixels, back.pixels);
    }

    #[test]
    fn paired_sample_requires_matching_dims() {
        let mask = SkeletonMask::new(Array2::zeros((8, 8)), "m");
        let img = SpectralImage::new(
            Array3::zeros((3, 4, 4)),
            ColorMode::Rgb.channels().to_vec(),
            "t",
        )
        .unwrap();
        assert!(PairedSample::new(mask, img, ColorMode::Rgb).is_err());
    }
}
