//! Affine-coupling normalizing flow on patch space (real-NVP style) and the
//! patch regularizer built on its inverse pass.
//!
//! Each layer applies a fixed permutation followed by a coupling step
//! x1 = z1, x2 = z2 ⊙ exp(s(z1)) + t(z1), with the scale output clamped to
//! c·tanh(s/c) so the per-layer expansion stays bounded. The latent law is
//! standard normal, so the negative log-likelihood of a patch x is, up to the
//! (d/2)·log 2π constant, ½‖T⁻¹(x)‖² − log|det ∇T⁻¹(x)| with
//! log|det ∇T⁻¹(x)| = −Σ layers Σ components s(x1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{extract_patches, scatter_patch_gradients, Image, PatchConfig, PatchSet};
use crate::math::seeded_rng;
use crate::tape::{Activation, AdamParams, AdamState, MlpSpec, NodeId, Tape};

/// Architecture of the flow. `hidden` is shared by every scale/translation
/// network; permutations alternate identity / reversal across layers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlowSpec {
    pub dim: usize,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub clamp: f64,
}

impl FlowSpec {
    pub fn new(dim: usize, layers: usize, hidden: Vec<usize>, clamp: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("flow dim must be >= 2"));
        }
        if layers == 0 {
            return Err(Error::invalid("flow needs at least one layer"));
        }
        if clamp <= 0.0 {
            return Err(Error::invalid("scale clamp must be positive"));
        }
        Ok(FlowSpec { dim, layers, hidden, clamp })
    }

    /// 5 coupling layers, two hidden layers of width 64, clamp 2.
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        FlowSpec::new(dim, 5, vec![64, 64], 2.0)
    }

    fn split(&self) -> (usize, usize) {
        let d1 = self.dim / 2;
        (d1, self.dim - d1)
    }

    fn net_spec(&self) -> MlpSpec {
        let (d1, d2) = self.split();
        let mut sizes = vec![d1];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(d2);
        MlpSpec::new(sizes, Activation::Tanh)
    }

    /// Permutation of layer k: identity on even k, index reversal on odd k.
    fn permutation(&self, layer: usize) -> Option<Vec<usize>> {
        if layer % 2 == 0 {
            None
        } else {
            Some((0..self.dim).rev().collect())
        }
    }
}

/// Node handles into the inverse tape.
#[derive(Debug, Clone, Copy)]
struct InverseTaps {
    latent: NodeId,
    neg_logdet: NodeId,
    loss: NodeId,
}

/// Trained (or freshly initialized) flow: one parameter list shared by a
/// forward tape and an inverse tape with identical parameter declarations.
#[derive(Debug, Clone)]
pub struct FlowModel {
    spec: FlowSpec,
    params: Vec<Vec<f64>>,
    forward_tape: Tape,
    forward_out: NodeId,
    inverse_tape: Tape,
    inverse_taps: InverseTaps,
}

fn clamp_scale(tape: &mut Tape, raw: NodeId, clamp: f64) -> NodeId {
    let shrunk = tape.scale(raw, 1.0 / clamp);
    let bounded = tape.tanh(shrunk);
    tape.scale(bounded, clamp)
}

impl FlowModel {
    /// Fresh model with Xavier-initialized networks.
    pub fn init(spec: FlowSpec, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let net = spec.net_spec();
        let mut params = Vec::new();
        for _ in 0..spec.layers {
            params.extend(net.init_params(&mut rng, 0.5)); // scale net
            params.extend(net.init_params(&mut rng, 0.5)); // translation net
        }
        FlowModel::from_params(spec, params).expect("init params match spec")
    }

    /// Rebuilds a model from its architecture and flat parameter list
    /// (layer 0 scale net, layer 0 translation net, layer 1 scale net, ...).
    pub fn from_params(spec: FlowSpec, params: Vec<Vec<f64>>) -> Result<Self> {
        let net = spec.net_spec();
        let (d1, d2) = spec.split();

        // forward tape: z -> x, layers 0..K
        let mut ftape = Tape::new();
        let fin = ftape.input(spec.dim);
        let mut f_ids = Vec::new();
        for _ in 0..spec.layers {
            let s_ids = net.declare(&mut ftape);
            let t_ids = net.declare(&mut ftape);
            f_ids.push((s_ids, t_ids));
        }
        let mut node = fin;
        for k in 0..spec.layers {
            if let Some(perm) = spec.permutation(k) {
                node = ftape.gather(node, perm);
            }
            let z1 = ftape.slice(node, 0, d1);
            let z2 = ftape.slice(node, d1, d2);
            let s_raw = net.wire(&mut ftape, z1, &f_ids[k].0);
            let s = clamp_scale(&mut ftape, s_raw, spec.clamp);
            let t = net.wire(&mut ftape, z1, &f_ids[k].1);
            let es = ftape.exp(s);
            let scaled = ftape.mul(z2, es);
            let x2 = ftape.add(scaled, t);
            node = ftape.concat(z1, x2);
        }
        let forward_out = node;

        // inverse tape: x -> z with the same parameter declaration order
        let mut itape = Tape::new();
        let iin = itape.input(spec.dim);
        let mut i_ids = Vec::new();
        for _ in 0..spec.layers {
            let s_ids = net.declare(&mut itape);
            let t_ids = net.declare(&mut itape);
            i_ids.push((s_ids, t_ids));
        }
        let mut node = iin;
        let mut sum_nodes = Vec::new();
        for k in (0..spec.layers).rev() {
            let x1 = itape.slice(node, 0, d1);
            let x2 = itape.slice(node, d1, d2);
            let s_raw = net.wire(&mut itape, x1, &i_ids[k].0);
            let s = clamp_scale(&mut itape, s_raw, spec.clamp);
            let t = net.wire(&mut itape, x1, &i_ids[k].1);
            let shifted = itape.sub(x2, t);
            let ns = itape.neg(s);
            let ens = itape.exp(ns);
            let z2 = itape.mul(shifted, ens);
            node = itape.concat(x1, z2);
            if let Some(perm) = spec.permutation(k) {
                // permutations here are involutions; gather undoes gather
                node = itape.gather(node, perm);
            }
            sum_nodes.push(itape.sum(s));
        }
        let latent = node;
        let mut neg_logdet = sum_nodes[0];
        for &s in &sum_nodes[1..] {
            neg_logdet = itape.add(neg_logdet, s);
        }
        let sq = itape.squared_norm(latent);
        let half = itape.scale(sq, 0.5);
        let loss = itape.add(half, neg_logdet);
        let inverse_taps = InverseTaps { latent, neg_logdet, loss };

        let expect: usize = itape.num_params();
        if params.len() != expect {
            return Err(Error::invalid(format!(
                "flow params: expected {expect} tensors, got {}",
                params.len()
            )));
        }
        for (p, shape) in params.iter().zip(itape.param_shapes()) {
            let n: usize = shape.iter().product();
            if p.len() != n {
                return Err(Error::invalid("flow params: shape mismatch"));
            }
        }

        Ok(FlowModel {
            spec,
            params,
            forward_tape: ftape,
            forward_out,
            inverse_tape: itape,
            inverse_taps,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.dim {
            return Err(Error::invalid(format!(
                "flow: point dim {} != model dim {}",
                x.len(),
                self.spec.dim
            )));
        }
        Ok(())
    }

    /// T(z): latent to data space.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let values = self.forward_tape.forward(&self.params, &[z.to_vec()])?;
        Ok(values[self.forward_out].clone())
    }

    /// T⁻¹(x) and log|det ∇T⁻¹(x)|.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        let values = self.inverse_tape.forward(&self.params, &[x.to_vec()])?;
        let z = values[self.inverse_taps.latent].clone();
        let logdet = -values[self.inverse_taps.neg_logdet][0];
        Ok((z, logdet))
    }

    /// Per-point loss ½‖T⁻¹(x)‖² − log|det ∇T⁻¹(x)|.
    pub fn point_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let values = self.inverse_tape.forward(&self.params, &[x.to_vec()])?;
        Ok(values[self.inverse_taps.loss][0])
    }

    /// log-density of the pushforward model at x (change of variables).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        const LN_2PI: f64 = 1.837877066409345483560659472811;
        let loss = self.point_loss(x)?;
        Ok(-loss - 0.5 * self.spec.dim as f64 * LN_2PI)
    }

    /// Loss and gradient with respect to the input point.
    pub fn point_loss_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        let values = self.inverse_tape.forward(&self.params, &[x.to_vec()])?;
        let loss = values[self.inverse_taps.loss][0];
        let (_, ig) =
            self.inverse_tape
                .backward(&values, &self.params, self.inverse_taps.loss, 1.0)?;
        Ok((loss, ig.into_iter().next().unwrap()))
    }

    /// Mean loss over a batch and its parameter gradients.
    pub fn batch_loss_param_grads(&self, batch: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut total = 0.0;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let scale = 1.0 / batch.len() as f64;
        for &x in batch {
            let values = self.inverse_tape.forward(&self.params, &[x.to_vec()])?;
            total += values[self.inverse_taps.loss][0];
            let (pg, _) =
                self.inverse_tape
                    .backward(&values, &self.params, self.inverse_taps.loss, scale)?;
            for (acc, g) in grads.iter_mut().zip(pg) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        Ok((total * scale, grads))
    }
}

/// Negative log-likelihood loss of a patch batch under the flow, averaged,
/// up to the (d/2)·log 2π constant.
pub fn nll_loss(model: &FlowModel, patches: &[Vec<f64>]) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::invalid("nll_loss: empty batch"));
    }
    let mut total = 0.0;
    for x in patches {
        total += model.point_loss(x)?;
    }
    Ok(total / patches.len() as f64)
}

/// Flow training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig { steps: 3000, batch_size: 128, adam: AdamParams::with_lr(1e-3), seed: 0 }
    }
}

/// Training outcome. `aborted_at` is set when a non-finite loss stopped the
/// run; `model` then holds the last finite iterate (the checkpoint to keep).
#[derive(Debug)]
pub struct FlowTrainResult {
    pub model: FlowModel,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub aborted_at: Option<usize>,
}

/// Trains a flow on patch vectors with mini-batch Adam steps. Deterministic
/// under a fixed seed.
pub fn train_flow(
    patches: &[Vec<f64>],
    spec: FlowSpec,
    cfg: &FlowTrainConfig,
) -> Result<FlowTrainResult> {
    if patches.len() < cfg.batch_size.max(1) {
        return Err(Error::invalid(format!(
            "train_flow: need at least {} patches, got {}",
            cfg.batch_size.max(1),
            patches.len()
        )));
    }
    let mut model = FlowModel::init(spec, cfg.seed);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::for_params(&model.params, cfg.adam);
    let mut trace = Vec::new();
    let mut last_good = model.params.clone();

    for step in 0..cfg.steps {
        let batch: Vec<&[f64]> = (0..cfg.batch_size)
            .map(|_| patches[rng.random_range(0..patches.len())].as_slice())
            .collect();
        let result = model.batch_loss_param_grads(&batch);
        let (loss, grads) = match result {
            Ok(ok) => ok,
            Err(Error::Numerics(msg)) => {
                log::warn!("train_flow: aborted at step {step}: {msg}");
                model.params = last_good;
                let final_loss = trace.last().copied().unwrap_or(f64::NAN);
                return Ok(FlowTrainResult {
                    model,
                    final_loss,
                    loss_trace: trace,
                    aborted_at: Some(step),
                });
            }
            Err(e) => return Err(e),
        };
        trace.push(loss);
        last_good = model.params.clone();
        adam.step(&mut model.params, &grads)?;
    }
    let final_loss = nll_loss(&model, patches)?;
    Ok(FlowTrainResult { model, final_loss, loss_trace: trace, aborted_at: None })
}

/// patchNR value: mean per-patch flow loss over all patches of the image.
pub fn patchnr_value(model: &FlowModel, image: &Image, cfg: &PatchConfig) -> Result<f64> {
    if model.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "patchnr: model dim {} != patch dim {}",
            model.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    nll_loss(model, patches.vectors())
}

/// Gradient of [`patchnr_value`] with respect to the pixels.
pub fn patchnr_grad(model: &FlowModel, image: &Image, cfg: &PatchConfig) -> Result<Image> {
    if model.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "patchnr: model dim {} != patch dim {}",
            model.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    let n = patches.len() as f64;
    let mut grads = Vec::with_capacity(patches.len());
    for v in patches.vectors() {
        let (_, mut g) = model.point_loss_grad(v)?;
        for gi in &mut g {
            *gi /= n;
        }
        grads.push(g);
    }
    let gset = PatchSet::new(model.dim(), grads, patches.origins().to_vec())?;
    scatter_patch_gradients(&gset, image.width(), image.height(), cfg)
}
