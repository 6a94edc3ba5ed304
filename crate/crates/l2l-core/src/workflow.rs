//! End-to-end generation workflow and post-hoc refinement.
//!
//! Per generated leaf: draw a latent vector from the fitted prior, decode it
//! to a binary skeleton, optionally keep only the largest connected
//! component, then translate the skeleton into a colorized leaf. Each leaf
//! derives its own RNG stream from (root seed, index), so generation is
//! order-independent and embarrassingly parallel.

use ndarray::Array2;

use crate::checkpoint::Checkpoint;
pub use crate::components::{label_components, refine, ComponentLabeling, Connectivity};
use crate::error::{Error, Result};
use crate::exec;
use crate::pix2pix::{self, Pix2Pix};
use crate::raster::{PairedSample, SkeletonMask, SpectralImage};
use crate::resvae::{self, LatentPrior, ResVae};
use crate::seed;

/// Decoder output binarization threshold for sampled skeletons.
pub const SKELETON_THRESHOLD: f32 = 0.5;
/// Any-channel value above this marks a pixel as leaf (dark background).
pub const BACKGROUND_THRESHOLD: f32 = 0.05;

/// One fully generated leaf with its provenance.
#[derive(Debug, Clone)]
pub struct GeneratedLeaf {
    pub skeleton: SkeletonMask,
    pub image: SpectralImage,
    pub latent: Vec<f32>,
    /// Derived per-leaf seed actually used for this leaf's RNG stream.
    pub seed: u64,
    pub refined: bool,
}

impl GeneratedLeaf {
    pub fn validate(&self) -> Result<()> {
        if self.skeleton.height() != self.image.height()
            || self.skeleton.width() != self.image.width()
        {
            return Err(Error::ShapeMismatch(
                "generated skeleton and image differ in size".into(),
            ));
        }
        Ok(())
    }
}

/// Run the four-step generation workflow for `n` leaves.
///
/// With `refine_skeletons` set, each non-empty sampled skeleton is reduced
/// to its largest 8-connected component before translation. Empty skeletons
/// are passed through unchanged (the translator tolerates blank input).
pub fn generate_leaves(
    n: usize,
    vae_ckpt: &Checkpoint,
    prior: &LatentPrior,
    p2p_ckpt: &Checkpoint,
    root_seed: u64,
    refine_skeletons: bool,
) -> Result<Vec<GeneratedLeaf>> {
    if n == 0 {
        return Err(Error::InvalidArgument("leaf count must be >= 1".into()));
    }
    prior.validate()?;
    // Fail fast on incompatible checkpoints before spawning workers.
    {
        let vae = ResVae::from_checkpoint(vae_ckpt)?;
        let p2p = Pix2Pix::from_checkpoint(p2p_ckpt)?;
        if vae.config.image_size != p2p.config.image_size {
            return Err(Error::ShapeMismatch(format!(
                "skeleton model size {} != translator size {}",
                vae.config.image_size, p2p.config.image_size
            )));
        }
        if prior.mean.len() != vae.config.latent_dim {
            return Err(Error::LatentLengthMismatch {
                expected: vae.config.latent_dim,
                got: prior.mean.len(),
            });
        }
    }

    let results = exec::map_indexed(n, |i| -> Result<GeneratedLeaf> {
        let mut vae = ResVae::from_checkpoint(vae_ckpt)?;
        let mut p2p = Pix2Pix::from_checkpoint(p2p_ckpt)?;
        let leaf_seed = seed::derive_indexed(root_seed, "leaf", i as u64);
        let mut rng = seed::rng_indexed(root_seed, "leaf", i as u64);
        let (mut skeleton, latent) =
            resvae::sample_skeleton(&mut vae, prior, &mut rng, SKELETON_THRESHOLD)?;
        skeleton.source_id = format!("generated_{i}");
        if refine_skeletons && skeleton.foreground_count() > 0 {
            skeleton = SkeletonMask::new(refine(&skeleton.pixels)?, skeleton.source_id.clone());
        }
        let image = pix2pix::translate(&mut p2p, &skeleton, false, &mut rng)?;
        let leaf = GeneratedLeaf {
            skeleton,
            image,
            latent,
            seed: leaf_seed,
            refined: refine_skeletons,
        };
        leaf.validate()?;
        Ok(leaf)
    });
    results.into_iter().collect()
}

/// Clean up a colorized leaf: threshold the image into a leaf-region mask,
/// keep the largest component, and zero (background color) every pixel of
/// the discarded components. The skeleton is masked consistently.
pub fn refine_colorized(leaf: &GeneratedLeaf) -> Result<GeneratedLeaf> {
    let (c, h, w) = leaf.image.pixels.dim();
    let mut region = Array2::<u8>::zeros((h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if leaf.image.pixels[[ch, y, x]] > BACKGROUND_THRESHOLD {
                    region[[y, x]] = 1;
                }
            }
        }
    }
    let kept = refine(&region)?;
    let mut image = leaf.image.clone();
    for y in 0..h {
        for x in 0..w {
            if region[[y, x]] == 1 && kept[[y, x]] == 0 {
                for ch in 0..c {
                    image.pixels[[ch, y, x]] = 0.0;
                }
            }
        }
    }
    let mut skeleton = leaf.skeleton.clone();
    for y in 0..h {
        for x in 0..w {
            if region[[y, x]] == 1 && kept[[y, x]] == 0 {
                skeleton.pixels[[y, x]] = 0;
            }
        }
    }
    Ok(GeneratedLeaf {
        skeleton,
        image,
        latent: leaf.latent.clone(),
        seed: leaf.seed,
        refined: true,
    })
}

/// Translate a training sample's skeleton and return the mean absolute
/// pixel error against its own paired target.
pub fn consistency_check(p2p_ckpt: &Checkpoint, sample: &PairedSample) -> Result<f32> {
    let mut p2p = Pix2Pix::from_checkpoint(p2p_ckpt)?;
    let mut rng = seed::rng(0, "consistency");
    let out = pix2pix::translate(&mut p2p, &sample.skeleton, false, &mut rng)?;
    mean_absolute_error(&out, &sample.target)
}

/// Mean absolute per-element error between two equal-shape images.
pub fn mean_absolute_error(a: &SpectralImage, b: &SpectralImage) -> Result<f32> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "images {} and {} differ in shape",
            a.source_id, b.source_id
        )));
    }
    let n = a.pixels.len() as f32;
    Ok(a.pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f32>()
        / n)
}

/// Translate a skeleton that was never part of the training set. Same
/// contract as `pix2pix::translate`; named so held-out evaluation is an
/// explicit workflow step.
pub fn translate_unseen(p2p_ckpt: &Checkpoint, skeleton: &SkeletonMask) -> Result<SpectralImage> {
    let mut p2p = Pix2Pix::from_checkpoint(p2p_ckpt)?;
    let mut rng = seed::rng(0, "translate-unseen");
    pix2pix::translate(&mut p2p, skeleton, false, &mut rng)
}
