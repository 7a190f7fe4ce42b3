//! JSON run configuration shared by the CLI subcommands.
//!
//! Everything an experiment needs beyond the input files (weights,
//! iteration counts, architectures) lives here; command-line flags
//! only select the config path, output directory, seed override and
//! verbosity. The schema is versioned and validated before use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PatchConfig;
use crate::ot::{SemidualConfig, SinkhornConfig};
use crate::tape::AdamParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ct,
    Sr,
    Inpaint,
    ZeroShotSr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Epll,
    Patchnr,
    Alr,
    Wpp,
    WppEps,
    WppEpsRho,
}

/// Forward-model parameters per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForwardConfig {
    Ct {
        image_size: usize,
        n_angles: usize,
        n_detectors: usize,
        /// Optional limited-angle range [start, end) in radians.
        #[serde(default)]
        angle_range: Option<(f64, f64)>,
        #[serde(default = "default_n0")]
        n0: f64,
        #[serde(default = "default_mu_norm")]
        mu_norm: f64,
        #[serde(default = "default_freq_scaling")]
        freq_scaling: f64,
    },
    Sr {
        width: usize,
        height: usize,
        factor: usize,
        blur_sigma: f64,
        #[serde(default = "default_sr_noise")]
        noise_sigma: f64,
    },
    Inpaint {
        /// Path to the binary mask (PGM; 1 = observed).
        mask: String,
    },
}

fn default_n0() -> f64 {
    4096.0
}

fn default_mu_norm() -> f64 {
    81.35858
}

fn default_freq_scaling() -> f64 {
    0.641
}

fn default_sr_noise() -> f64 {
    0.01
}

/// Prior hyperparameters (only the fields for the selected prior are read).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// GMM component count.
    pub k: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// Flow architecture.
    pub flow_layers: usize,
    pub flow_hidden: Vec<usize>,
    pub flow_clamp: f64,
    pub flow_steps: usize,
    pub flow_batch: usize,
    pub flow_lr: f64,
    /// Critic architecture and WGAN-GP settings.
    pub alr_hidden: Vec<usize>,
    pub alr_steps: usize,
    pub alr_batch: usize,
    pub alr_lr: f64,
    pub alr_penalty_weight: f64,
    /// OT settings.
    pub epsilon: f64,
    pub rho: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub semidual_steps: usize,
    pub semidual_step_scale: f64,
    /// Reference-measure cap per evaluation.
    pub max_reference: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            k: 50,
            em_max_iters: 200,
            em_tol: 1e-6,
            flow_layers: 5,
            flow_hidden: vec![64, 64],
            flow_clamp: 2.0,
            flow_steps: 3000,
            flow_batch: 128,
            flow_lr: 1e-3,
            alr_hidden: vec![64, 64],
            alr_steps: 1000,
            alr_batch: 64,
            alr_lr: 1e-3,
            alr_penalty_weight: 10.0,
            epsilon: 0.01,
            rho: 1.0,
            sinkhorn_max_iter: 1000,
            sinkhorn_tol: 1e-6,
            semidual_steps: 10_000,
            semidual_step_scale: 1.0,
            max_reference: 10_000,
        }
    }
}

impl PriorConfig {
    pub fn sinkhorn_config(&self, rho: Option<f64>) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            rho,
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
        }
    }

    pub fn semidual_config(&self, seed: u64) -> SemidualConfig {
        SemidualConfig {
            steps: self.semidual_steps,
            step_scale: self.semidual_step_scale,
            seed,
            checkpoint_every: 0,
        }
    }
}

/// Solver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Regularizer weight in the MAP objective (α = σ²β for Gaussian noise).
    pub weight: f64,
    /// Initialization tag: "naive_inversion" | "zero".
    pub init: String,
    /// ULA settings.
    pub ula_step: f64,
    pub ula_burn_in: usize,
    pub ula_samples: usize,
    pub ula_thinning: usize,
    /// Clip iterates to [0,1] during sampling (always on for ALR).
    pub ula_clip: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 500,
            lr: 0.01,
            weight: 0.1,
            init: "naive_inversion".into(),
            ula_step: 1e-5,
            ula_burn_in: 2000,
            ula_samples: 10,
            ula_thinning: 200,
            ula_clip: false,
        }
    }
}

/// Adam hyperparameters for the reconstruction loop.
pub fn solver_adam(cfg: &SolverConfig) -> AdamParams {
    AdamParams::with_lr(cfg.lr)
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "schema_default")]
    pub schema_version: u32,
    pub task: Task,
    pub prior: PriorKind,
    pub forward: ForwardConfig,
    #[serde(default)]
    pub patch: PatchConfig,
    #[serde(default)]
    pub prior_params: PriorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    /// Reference images for prior fitting (unused in zero-shot/inpaint mode,
    /// where the prior is fit from the observation).
    #[serde(default)]
    pub reference_images: Vec<String>,
    /// Ground-truth image for simulate / metrics (optional elsewhere).
    #[serde(default)]
    pub ground_truth: Option<String>,
    /// Observation produced by `simulate`, consumed by `reconstruct`/`sample`.
    #[serde(default)]
    pub observation: Option<String>,
    /// Prior checkpoint path produced by `fit-prior`.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

pub fn parse_run_config(bytes: &[u8]) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_slice(bytes).map_err(|e| Error::invalid(format!("run config: {e}")))?;
    validate_run_config(&cfg)?;
    Ok(cfg)
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    parse_run_config(&std::fs::read(path)?)
}

pub fn validate_run_config(cfg: &RunConfig) -> Result<()> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "run config: schema version {} unsupported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    let consistent = matches!(
        (cfg.task, &cfg.forward),
        (Task::Ct, ForwardConfig::Ct { .. })
            | (Task::Sr, ForwardConfig::Sr { .. })
            | (Task::ZeroShotSr, ForwardConfig::Sr { .. })
            | (Task::Inpaint, ForwardConfig::Inpaint { .. })
    );
    if !consistent {
        return Err(Error::invalid(format!(
            "run config: task {:?} does not match the forward model kind",
            cfg.task
        )));
    }
    if cfg.patch.patch_size == 0 || cfg.patch.stride == 0 {
        return Err(Error::invalid("run config: patch size and stride must be >= 1"));
    }
    match &cfg.forward {
        ForwardConfig::Ct { image_size, n_angles, n_detectors, angle_range, n0, mu_norm, freq_scaling } => {
            if *image_size == 0 || *n_angles == 0 || *n_detectors == 0 {
                return Err(Error::invalid("run config: ct sizes must be >= 1"));
            }
            if *n0 <= 0.0 || *mu_norm <= 0.0 || *freq_scaling <= 0.0 || *freq_scaling > 1.0 {
                return Err(Error::invalid("run config: ct noise/filter parameters out of range"));
            }
            if let Some((start, end)) = angle_range {
                if !(0.0..std::f64::consts::PI).contains(start)
                    || *end <= *start
                    || *end > std::f64::consts::PI
                {
                    return Err(Error::invalid("run config: ct angle range invalid"));
                }
            }
        }
        ForwardConfig::Sr { width, height, factor, blur_sigma, noise_sigma } => {
            if *factor == 0 || *width == 0 || *height == 0 {
                return Err(Error::invalid("run config: sr shape/factor must be >= 1"));
            }
            if width % factor != 0 || height % factor != 0 {
                return Err(Error::invalid("run config: sr shape must be divisible by the factor"));
            }
            if *blur_sigma <= 0.0 || *noise_sigma < 0.0 {
                return Err(Error::invalid("run config: sr blur/noise parameters out of range"));
            }
        }
        ForwardConfig::Inpaint { mask } => {
            if mask.is_empty() {
                return Err(Error::invalid("run config: inpaint mask path is empty"));
            }
        }
    }
    if cfg.solver.weight < 0.0 {
        return Err(Error::invalid("run config: regularizer weight must be nonnegative"));
    }
    if cfg.prior_params.epsilon <= 0.0 || cfg.prior_params.rho <= 0.0 {
        return Err(Error::invalid("run config: epsilon and rho must be positive"));
    }
    if cfg.prior_params.k == 0 {
        return Err(Error::invalid("run config: gmm K must be >= 1"));
    }
    Ok(())
}
