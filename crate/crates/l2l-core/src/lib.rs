//! Two-stage generative pipeline for synthetic leaf imagery.
//!
//! The pipeline has two learned stages: a residual variational autoencoder
//! that models binary leaf skeletons in a 32-dimensional latent space, and a
//! conditional GAN that translates a skeleton into a colorized RGB or RGNIR
//! leaf. Around the two models sit the dataset preprocessing chain
//! (hot-pixel removal, reflectance calibration, skeleton extraction,
//! augmentation), a component-based refinement pass for generated masks, and
//! an anomaly-detection evaluator (autoencoder reconstruction error scored
//! via ROC/AUC).

pub mod anomaly;
pub mod checkpoint;
pub mod components;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod morphology;
pub mod nn;
pub mod pix2pix;
pub mod raster;
pub mod resvae;
pub mod roc_plot;
pub mod seed;
pub mod toy;
pub mod workflow;

pub use error::{Error, Result};
