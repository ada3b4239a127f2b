//! Deep angiogram: a contrastive auto-encoder that maps colour fundus images
//! to a vessels-only latent image, segmented by Otsu thresholding.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode autodiff graph.
//! * [`nn`]: residual U-Net encoder/decoder, parameter init, checkpoints.
//! * [`imgproc`]: CLAHE, Otsu, grayscale reductions, global SSIM, augmentation, image IO.
//! * [`losses`]: segmentation and contrastive objectives.
//! * [`data`]: manifests, sample loading, patch sampling, synthetic vessel phantoms.
//! * [`train`]: Adam, learning-rate schedule, trainers, inference, metrics.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is on.

pub mod data;
pub mod error;
pub mod exec;
pub mod imgproc;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
