//! Patch-based image priors for inverse problems.
//!
//! The crate learns a prior for the patch distribution of one or a few
//! reference images and uses it to regularize MAP reconstruction or Langevin
//! posterior sampling in super-resolution, inpainting, and computed
//! tomography. Six interchangeable regularizers are provided:
//!
//! - [`gmm`]: Gaussian-mixture expected patch log-likelihood (EPLL),
//! - [`flow`]: affine-coupling normalizing flow on patch space,
//! - [`alr`]: adversarially trained patch discriminator,
//! - [`ot`]: Wasserstein-2, entropic Sinkhorn and semi-unbalanced Sinkhorn
//!   distances between empirical patch measures.
//!
//! [`forward`] holds the measurement operators (blur+subsample, masking,
//! parallel-beam Radon with filtered backprojection) and noise models,
//! [`recon`] the MAP/Langevin solvers, [`metrics`] PSNR/SSIM, and
//! [`checkpoint`]/[`config`] the on-disk formats used by the CLI.

pub mod alr;
pub mod bayes;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod flow;
pub mod forward;
pub mod gmm;
pub mod image;
pub mod io;
pub mod math;
pub mod measure;
pub mod metrics;
pub mod ot;
pub mod recon;
pub mod regularizer;
pub mod tape;

pub use error::{Error, Result};
pub use image::{extract_patches, scatter_patch_gradients, Image, PatchConfig, PatchSet};
pub use measure::{patch_measure, DiscreteMeasure};
