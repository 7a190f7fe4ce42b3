//! Adversarial local regularizer: a patch discriminator trained WGAN-GP
//! style to separate clean reference patches from patches of a naive
//! inversion of the observation. The regularizer is the mean discriminator
//! output over the patches of the iterate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardOp;
use crate::image::{extract_patches, scatter_patch_gradients, Image, PatchConfig, PatchSet};
use crate::math::seeded_rng;
use crate::tape::{Activation, AdamParams, AdamState, MlpSpec, NodeId, Tape};

/// Scalar-output patch critic with softplus activations (smooth everywhere,
/// so the gradient-penalty second derivatives exist).
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: MlpSpec,
    params: Vec<Vec<f64>>,
    tape: Tape,
    out: NodeId,
}

impl Discriminator {
    pub fn init(dim: usize, hidden: Vec<usize>, seed: u64) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(&hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, Activation::Softplus);
        let mut rng = seeded_rng(seed);
        let params = spec.init_params(&mut rng, 1.0);
        Discriminator::from_params(spec, params).expect("init params match spec")
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Vec<f64>>) -> Result<Self> {
        if *spec.sizes.last().unwrap() != 1 {
            return Err(Error::invalid("discriminator must have scalar output"));
        }
        let mut tape = Tape::new();
        let input = tape.input(spec.sizes[0]);
        let ids = spec.declare(&mut tape);
        let pre = spec.wire(&mut tape, input, &ids);
        let out = tape.sum(pre); // [1] -> scalar node
        if params.len() != tape.num_params() {
            return Err(Error::invalid(format!(
                "discriminator params: expected {} tensors, got {}",
                tape.num_params(),
                params.len()
            )));
        }
        for (p, shape) in params.iter().zip(tape.param_shapes()) {
            let n: usize = shape.iter().product();
            if p.len() != n {
                return Err(Error::invalid("discriminator params: shape mismatch"));
            }
        }
        Ok(Discriminator { spec, params, tape, out })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid("discriminator: input dim mismatch"));
        }
        let values = self.tape.forward(&self.params, &[x.to_vec()])?;
        Ok(values[self.out][0])
    }

    /// D(x) and ∇_x D(x).
    pub fn value_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::invalid("discriminator: input dim mismatch"));
        }
        let values = self.tape.forward(&self.params, &[x.to_vec()])?;
        let v = values[self.out][0];
        let (_, ig) = self.tape.backward(&values, &self.params, self.out, 1.0)?;
        Ok((v, ig.into_iter().next().unwrap()))
    }

    /// D(x) and ∇_θ D(x), scaled by `seed`.
    fn value_param_grads(&self, x: &[f64], seed: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        let values = self.tape.forward(&self.params, &[x.to_vec()])?;
        let v = values[self.out][0];
        let (pg, _) = self.tape.backward(&values, &self.params, self.out, seed)?;
        Ok((v, pg))
    }

    fn penalty_param_grads(&self, x: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        self.tape.gradient_penalty(&self.params, x, self.out)
    }
}

/// Patches of the task's naive inversion of the observation: bicubic
/// upsampling for super-resolution, FBP for CT, the zero-filled observation
/// for inpainting. These are the "fake" samples the critic learns to
/// separate from clean reference patches.
pub fn degraded_patch_source(
    observation: &Image,
    forward: &ForwardOp,
    cfg: &PatchConfig,
) -> Result<PatchSet> {
    let degraded = forward.naive_inversion(observation)?;
    extract_patches(&degraded, cfg)
}

/// WGAN-GP training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlrTrainConfig {
    /// Gradient penalty weight λ > 0.
    pub penalty_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamParams,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for AlrTrainConfig {
    fn default() -> Self {
        AlrTrainConfig {
            penalty_weight: 10.0,
            batch_size: 64,
            steps: 1000,
            adam: AdamParams::with_lr(1e-3),
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

fn accumulate(acc: &mut [Vec<f64>], grads: Vec<Vec<f64>>, scale: f64) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (av, gv) in a.iter_mut().zip(g) {
            *av += scale * gv;
        }
    }
}

/// WGAN-GP minimization loss
/// −[mean D(true) − mean D(fake) − λ·mean (‖∇D(αx+(1−α)x̃)‖−1)²]
/// with a fresh uniform α per true/fake pair, and its parameter gradients.
pub fn wgan_gp_objective(
    disc: &Discriminator,
    true_batch: &[&[f64]],
    fake_batch: &[&[f64]],
    penalty_weight: f64,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if true_batch.is_empty() || fake_batch.is_empty() {
        return Err(Error::invalid("wgan objective: empty batch"));
    }
    let dim = disc.dim();
    if true_batch.iter().chain(fake_batch.iter()).any(|x| x.len() != dim) {
        return Err(Error::invalid("wgan objective: patch dimension mismatch"));
    }
    let mut rng = seeded_rng(seed);
    let mut grads: Vec<Vec<f64>> = disc.params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss = 0.0;

    // −mean D(true)
    let wt = 1.0 / true_batch.len() as f64;
    for &x in true_batch {
        let (v, pg) = disc.value_param_grads(x, -wt)?;
        loss -= wt * v;
        accumulate(&mut grads, pg, 1.0);
    }
    // +mean D(fake)
    let wf = 1.0 / fake_batch.len() as f64;
    for &x in fake_batch {
        let (v, pg) = disc.value_param_grads(x, wf)?;
        loss += wf * v;
        accumulate(&mut grads, pg, 1.0);
    }
    // +λ·mean penalty over index-paired samples
    let pairs = true_batch.len().min(fake_batch.len());
    let wp = penalty_weight / pairs as f64;
    for k in 0..pairs {
        let alpha: f64 = rng.random();
        let mix: Vec<f64> = true_batch[k]
            .iter()
            .zip(fake_batch[k])
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let (penalty, pg) = disc.penalty_param_grads(&mix)?;
        loss += wp * penalty;
        accumulate(&mut grads, pg, wp);
    }
    Ok((loss, grads))
}

/// Training outcome; `gap` is mean D(true) − mean D(fake) at the end.
#[derive(Debug)]
pub struct AlrTrainResult {
    pub discriminator: Discriminator,
    pub gap: f64,
    pub loss_trace: Vec<f64>,
    pub aborted_at: Option<usize>,
}

/// Trains the patch critic by plain Adam ascent on the WGAN-GP objective
/// (no generator; the degraded distribution is fixed).
pub fn train_alr(
    true_patches: &[Vec<f64>],
    degraded_patches: &[Vec<f64>],
    cfg: &AlrTrainConfig,
) -> Result<AlrTrainResult> {
    if true_patches.is_empty() || degraded_patches.is_empty() {
        return Err(Error::invalid("train_alr: both patch sets must be non-empty"));
    }
    if cfg.penalty_weight <= 0.0 {
        return Err(Error::invalid("train_alr: penalty weight must be positive"));
    }
    let dim = true_patches[0].len();
    let mut disc = Discriminator::init(dim, cfg.hidden.clone(), cfg.seed);
    let mut adam = AdamState::for_params(&disc.params, cfg.adam);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut trace = Vec::new();
    let mut last_good = disc.params.clone();

    for step in 0..cfg.steps {
        let tb: Vec<&[f64]> = (0..cfg.batch_size)
            .map(|_| true_patches[rng.random_range(0..true_patches.len())].as_slice())
            .collect();
        let fb: Vec<&[f64]> = (0..cfg.batch_size)
            .map(|_| degraded_patches[rng.random_range(0..degraded_patches.len())].as_slice())
            .collect();
        let pair_seed = rng.random();
        match wgan_gp_objective(&disc, &tb, &fb, cfg.penalty_weight, pair_seed) {
            Ok((loss, grads)) => {
                trace.push(loss);
                last_good = disc.params.clone();
                adam.step(&mut disc.params, &grads)?;
            }
            Err(Error::Numerics(msg)) => {
                log::warn!("train_alr: aborted at step {step}: {msg}");
                disc.params = last_good;
                return Ok(AlrTrainResult {
                    gap: mean_gap(&disc, true_patches, degraded_patches)?,
                    discriminator: disc,
                    loss_trace: trace,
                    aborted_at: Some(step),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let gap = mean_gap(&disc, true_patches, degraded_patches)?;
    Ok(AlrTrainResult { discriminator: disc, gap, loss_trace: trace, aborted_at: None })
}

fn mean_gap(disc: &Discriminator, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut ma = 0.0;
    for x in a {
        ma += disc.value(x)?;
    }
    let mut mb = 0.0;
    for x in b {
        mb += disc.value(x)?;
    }
    Ok(ma / a.len() as f64 - mb / b.len() as f64)
}

/// ALR value: mean discriminator output over the patches of the image.
pub fn alr_value(disc: &Discriminator, image: &Image, cfg: &PatchConfig) -> Result<f64> {
    if disc.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "alr: discriminator dim {} != patch dim {}",
            disc.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    let mut total = 0.0;
    for v in patches.vectors() {
        total += disc.value(v)?;
    }
    Ok(total / patches.len() as f64)
}

/// Gradient of [`alr_value`] with respect to the pixels.
pub fn alr_grad(disc: &Discriminator, image: &Image, cfg: &PatchConfig) -> Result<Image> {
    if disc.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "alr: discriminator dim {} != patch dim {}",
            disc.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    let n = patches.len() as f64;
    let mut grads = Vec::with_capacity(patches.len());
    for v in patches.vectors() {
        let (_, mut g) = disc.value_input_grad(v)?;
        for gi in &mut g {
            *gi /= n;
        }
        grads.push(g);
    }
    let gset = PatchSet::new(disc.dim(), grads, patches.origins().to_vec())?;
    scatter_patch_gradients(&gset, image.width(), image.height(), cfg)
}
