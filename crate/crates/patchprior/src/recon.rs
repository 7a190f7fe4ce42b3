//! Variational reconstruction and Langevin posterior sampling.
//!
//! MAP solves min_x D(F(x), y) + weight · R(x) by Adam on the pixels;
//! noise-free inpainting replaces the data term by re-projecting the observed
//! pixels after every step; ULA runs the Euler-Maruyama discretization of the
//! overdamped Langevin SDE targeting exp(−NLL − β·R).

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{data_grad, data_value, DataTerm, ForwardOp, InpaintModel};
use crate::image::Image;
use crate::math::seeded_rng;
use crate::regularizer::{check_gradient_contract, Regularizer};
use crate::tape::{AdamParams, AdamState};

/// The variational problem: forward model, data term, prior and its weight.
///
/// `weight` multiplies R in the MAP objective (α = σ²β for the Gaussian
/// term); the Langevin drift rescales by the data term's NLL factor so the
/// chain targets the actual posterior.
pub struct ReconProblem {
    pub forward: ForwardOp,
    pub data_term: DataTerm,
    pub regularizer: Box<dyn Regularizer>,
    pub weight: f64,
}

impl ReconProblem {
    pub fn validate(&self) -> Result<()> {
        if self.weight < 0.0 {
            return Err(Error::invalid("regularizer weight must be nonnegative"));
        }
        Ok(())
    }

    fn objective(&self, x: &Image, y: &Image) -> Result<f64> {
        let data = data_value(&self.data_term, self.forward.op(), x, y)?;
        if self.weight == 0.0 {
            return Ok(data);
        }
        Ok(data + self.weight * self.regularizer.value(x)?)
    }

    fn gradient(&self, x: &Image, y: &Image) -> Result<Image> {
        let mut g = data_grad(&self.data_term, self.forward.op(), x, y)?;
        if self.weight != 0.0 {
            let rg = self.regularizer.grad(x)?;
            for (gv, rv) in g.data_mut().iter_mut().zip(rg.data()) {
                *gv += self.weight * rv;
            }
        }
        Ok(g)
    }
}

/// Initial iterate for the solvers.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Task-specific naive inversion: FBP for CT, bicubic for
    /// super-resolution, the zero-filled observation for inpainting.
    #[default]
    NaiveInversion,
    Zero,
    #[serde(skip)]
    Given(Image),
}

/// MAP solver settings.
#[derive(Debug, Clone, Default)]
pub struct MapConfig {
    pub iterations: usize,
    pub adam: AdamParams,
    pub init: InitScheme,
    pub seed: u64,
    /// Skip the registration-time gradient contract check (it runs once per
    /// call and costs a handful of probe evaluations).
    pub skip_gradient_check: bool,
}

impl MapConfig {
    pub fn new(iterations: usize, lr: f64) -> Self {
        MapConfig { iterations, adam: AdamParams::with_lr(lr), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub image: Image,
    pub objective_trace: Vec<f64>,
    /// Set when a non-finite objective stopped the run early; the image is
    /// the last finite iterate.
    pub aborted_at: Option<usize>,
}

fn initial_iterate(problem: &ReconProblem, y: &Image, init: &InitScheme) -> Result<Image> {
    let (w, h) = problem.forward.op().input_shape();
    match init {
        InitScheme::NaiveInversion => problem.forward.naive_inversion(y),
        InitScheme::Zero => Ok(Image::zeros(w, h)),
        InitScheme::Given(img) => {
            if (img.width(), img.height()) != (w, h) {
                return Err(Error::invalid("init image shape mismatch"));
            }
            Ok(img.clone())
        }
    }
}

/// Adaptive-moment descent on D(F(x), y) + weight·R(x).
pub fn map_reconstruct(problem: &ReconProblem, y: &Image, cfg: &MapConfig) -> Result<MapResult> {
    problem.validate()?;
    if cfg.iterations == 0 {
        return Err(Error::invalid("map_reconstruct: iterations must be >= 1"));
    }
    if problem.data_term.is_equality() {
        return Err(Error::invalid(
            "map_reconstruct: equality data term requires inpaint_map (projection)",
        ));
    }
    if !cfg.skip_gradient_check && problem.weight != 0.0 {
        check_gradient_contract(problem.regularizer.as_ref(), 1e-3)?;
    }
    let mut x = initial_iterate(problem, y, &cfg.init)?;
    let mut adam = AdamState::new(&[x.len()], cfg.adam);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut last_good = x.clone();

    for step in 0..cfg.iterations {
        let objective = problem.objective(&x, y)?;
        if !objective.is_finite() {
            log::warn!("map_reconstruct: non-finite objective at step {step}");
            return Ok(MapResult { image: last_good, objective_trace: trace, aborted_at: Some(step) });
        }
        trace.push(objective);
        last_good = x.clone();
        let grad = problem.gradient(&x, y)?;
        let (w, h) = (x.width(), x.height());
        let mut params = vec![x.into_data()];
        adam.step(&mut params, &[grad.into_data()])?;
        x = Image::new(w, h, params.pop().unwrap())?;
    }
    Ok(MapResult { image: x, objective_trace: trace, aborted_at: None })
}

/// Projected descent for the noise-free inpainting problem
/// argmin { R(x) : x ⊙ m = y }: Adam step on weight·R, then reset the
/// observed pixels to y. Observed pixels match y bit-exactly on exit.
pub fn inpaint_map(problem: &ReconProblem, y: &Image, cfg: &MapConfig) -> Result<MapResult> {
    problem.validate()?;
    let ForwardOp::Inpaint(model) = &problem.forward else {
        return Err(Error::invalid("inpaint_map requires an inpainting forward model"));
    };
    if !problem.data_term.is_equality() {
        return Err(Error::invalid("inpaint_map requires the equality data term"));
    }
    if !cfg.skip_gradient_check {
        check_gradient_contract(problem.regularizer.as_ref(), 1e-3)?;
    }
    let mut x = initial_iterate(problem, y, &cfg.init)?;
    project_observed(&mut x, y, model);
    let mut adam = AdamState::new(&[x.len()], cfg.adam);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut last_good = x.clone();

    for step in 0..cfg.iterations {
        let value = problem.regularizer.value(&x)?;
        if !value.is_finite() {
            log::warn!("inpaint_map: non-finite regularizer value at step {step}");
            return Ok(MapResult { image: last_good, objective_trace: trace, aborted_at: Some(step) });
        }
        trace.push(self_weighted(problem.weight, value));
        last_good = x.clone();
        let grad = problem.regularizer.grad(&x)?;
        let scaled: Vec<f64> = grad.data().iter().map(|g| g * problem.weight).collect();
        let mut params = vec![x.clone().into_data()];
        adam.step(&mut params, &[scaled])?;
        x = Image::new(x.width(), x.height(), params.pop().unwrap())?;
        project_observed(&mut x, y, model);
    }
    Ok(MapResult { image: x, objective_trace: trace, aborted_at: None })
}

fn self_weighted(weight: f64, value: f64) -> f64 {
    if weight == 0.0 {
        value
    } else {
        weight * value
    }
}

fn project_observed(x: &mut Image, y: &Image, model: &InpaintModel) {
    for (idx, v) in x.data_mut().iter_mut().enumerate() {
        if model.observed(idx) {
            *v = y.data()[idx];
        }
    }
}

/// Unadjusted Langevin settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UlaConfig {
    /// Step size δ of the Euler-Maruyama discretization.
    pub step: f64,
    pub burn_in: usize,
    pub n_samples: usize,
    /// Keep every `thinning`-th state after burn-in.
    pub thinning: usize,
    /// Clamp the iterate to [0, 1] after every step.
    pub clip: bool,
    pub seed: u64,
    #[serde(skip)]
    pub init: InitScheme,
}

impl Default for UlaConfig {
    fn default() -> Self {
        UlaConfig {
            step: 1e-4,
            burn_in: 1000,
            n_samples: 10,
            thinning: 100,
            clip: false,
            seed: 0,
            init: InitScheme::NaiveInversion,
        }
    }
}

#[derive(Debug)]
pub struct UlaResult {
    pub samples: Vec<Image>,
    /// Set when the chain hit a non-finite state; samples collected so far
    /// are kept.
    pub aborted_at: Option<usize>,
}

/// Euler-Maruyama chain
/// X_{k+1} = X_k − δ·s·(∇D + weight·∇R)(X_k) + √(2δ)·Z_{k+1}
/// with s the data term's NLL scale; for the equality term the data drift is
/// replaced by re-projecting observed pixels after every step.
pub fn ula_sample(problem: &ReconProblem, y: &Image, cfg: &UlaConfig) -> Result<UlaResult> {
    problem.validate()?;
    if cfg.step <= 0.0 {
        return Err(Error::invalid("ula: step size must be positive"));
    }
    if cfg.n_samples == 0 || cfg.thinning == 0 {
        return Err(Error::invalid("ula: sample count and thinning must be >= 1"));
    }
    let equality = problem.data_term.is_equality();
    let inpaint_model = match (&problem.forward, equality) {
        (ForwardOp::Inpaint(m), true) => Some(m),
        (_, true) => {
            return Err(Error::invalid("ula: equality data term requires an inpainting model"))
        }
        _ => None,
    };
    let mut x = initial_iterate(problem, y, &cfg.init)?;
    if let Some(model) = inpaint_model {
        project_observed(&mut x, y, model);
    }
    let mut rng = seeded_rng(cfg.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise_scale = (2.0 * cfg.step).sqrt();
    let nll_scale = problem.data_term.nll_scale();
    let total_steps = cfg.burn_in + cfg.n_samples * cfg.thinning;
    let mut samples = Vec::with_capacity(cfg.n_samples);

    for step in 0..total_steps {
        let drift = if equality {
            let rg = problem.regularizer.grad(&x)?;
            rg.map(|v| -cfg.step * problem.weight * v)
        } else {
            let g = problem.gradient(&x, y)?;
            g.map(|v| -cfg.step * nll_scale * v)
        };
        let mut diverged = false;
        for (xv, dv) in x.data_mut().iter_mut().zip(drift.data()) {
            *xv += dv + noise_scale * normal.sample(&mut rng);
            if !xv.is_finite() {
                diverged = true;
            }
        }
        if diverged {
            log::warn!("ula: non-finite state at step {step}");
            return Ok(UlaResult { samples, aborted_at: Some(step) });
        }
        if let Some(model) = inpaint_model {
            project_observed(&mut x, y, model);
        }
        if cfg.clip {
            x.clamp(0.0, 1.0);
        }
        if step >= cfg.burn_in && (step - cfg.burn_in + 1) % cfg.thinning == 0 {
            samples.push(x.clone());
            if samples.len() == cfg.n_samples {
                break;
            }
        }
    }
    Ok(UlaResult { samples, aborted_at: None })
}

/// Per-pixel sample mean and unbiased standard deviation.
pub fn posterior_stats(samples: &[Image]) -> Result<(Image, Image)> {
    if samples.len() < 2 {
        return Err(Error::invalid("posterior_stats needs at least 2 samples"));
    }
    let first = &samples[0];
    if samples.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::invalid("posterior_stats: sample shapes differ"));
    }
    let n = samples.len() as f64;
    // anchored at the first sample so identical samples give exact zeros
    let mut mean = first.clone();
    for s in &samples[1..] {
        for ((m, v), f) in mean.data_mut().iter_mut().zip(s.data()).zip(first.data()) {
            *m += (v - f) / n;
        }
    }
    let mut var = Image::zeros(first.width(), first.height());
    for s in samples {
        for ((vv, v), m) in var.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
            *vv += (v - m) * (v - m) / (n - 1.0);
        }
    }
    let std = var.map(|v| v.sqrt());
    Ok((mean, std))
}
