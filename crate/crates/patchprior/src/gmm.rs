//! Gaussian mixture patch prior: EM fitting, log-densities, expected patch
//! log-likelihood (EPLL) value and analytic gradient.
//!
//! Responsibilities are computed in the log domain throughout; 36-dimensional
//! Gaussians underflow linear-domain arithmetic long before EM converges.

use log::warn;
use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{extract_patches, scatter_patch_gradients, Image, PatchConfig, PatchSet};
use crate::math::{logsumexp, seeded_rng, Cholesky};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// One mixture component with cached factorization.
#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    chol: Cholesky,
    log_det: f64,
}

impl GmmComponent {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::invalid("component covariance shape does not match mean"));
        }
        let chol = Cholesky::new(&covariance)?;
        let log_det = chol.log_det();
        Ok(GmmComponent { mean, covariance, chol, log_det })
    }

    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// Gaussian mixture model on patch space.
#[derive(Debug, Clone)]
pub struct GmmModel {
    dim: usize,
    log_weights: Vec<f64>,
    components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid("weights and components must be non-empty and matching"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid("mixture weights must be positive and sum to 1"));
        }
        let dim = components[0].mean.len();
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::invalid("mixture components have inconsistent dimension"));
        }
        Ok(GmmModel {
            dim,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// log Σ_k α_k φ(x | m_k, Σ_k), evaluated with log-sum-exp.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "gmm logpdf: point dim {} != model dim {}",
                x.len(),
                self.dim
            )));
        }
        let terms: Vec<f64> = (0..self.k())
            .map(|k| self.log_weights[k] + gaussian_logpdf_prepared(x, &self.components[k]))
            .collect();
        Ok(logsumexp(&terms))
    }

    /// Log-domain responsibilities log β_k(x); rows normalize to 1 exactly.
    pub fn log_responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut terms: Vec<f64> = (0..self.k())
            .map(|k| self.log_weights[k] + gaussian_logpdf_prepared(x, &self.components[k]))
            .collect();
        if terms.iter().any(|t| !t.is_finite() && *t != f64::NEG_INFINITY) {
            return Err(Error::numerics("gmm responsibilities: non-finite log density"));
        }
        let lse = logsumexp(&terms);
        for t in &mut terms {
            *t -= lse;
        }
        Ok(terms)
    }
}

fn gaussian_logpdf_prepared(x: &[f64], comp: &GmmComponent) -> f64 {
    let d = x.len();
    let mut diff: Vec<f64> = x.iter().zip(comp.mean.iter()).map(|(a, b)| a - b).collect();
    comp.chol.solve_lower(&mut diff);
    let quad: f64 = diff.iter().map(|v| v * v).sum();
    -0.5 * (d as f64 * LN_2PI + comp.log_det + quad)
}

/// log φ(x | m, Σ) given a Cholesky factor of Σ.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], chol: &Cholesky) -> Result<f64> {
    if x.len() != mean.len() || x.len() != chol.dim() {
        return Err(Error::invalid("gaussian logpdf: dimension mismatch"));
    }
    let mut diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    chol.solve_lower(&mut diff);
    let quad: f64 = diff.iter().map(|v| v * v).sum();
    Ok(-0.5 * (x.len() as f64 * LN_2PI + chol.log_det() + quad))
}

/// EM settings.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    /// Added to covariance diagonals after every M-step. A value of 0 selects
    /// the default 1e-6·trace(Σ_global)/d.
    pub cov_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { k: 50, max_iters: 200, tol: 1e-6, cov_floor: 0.0, seed: 0 }
    }
}

impl EmConfig {
    pub fn new(k: usize) -> Self {
        EmConfig { k, ..Default::default() }
    }
}

/// Result of an EM fit: the model plus its per-iteration log-likelihood trace.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub loglik_trace: Vec<f64>,
}

fn sample_mean_cov(points: &[Vec<f64>]) -> (Array1<f64>, Array2<f64>) {
    let n = points.len();
    let d = points[0].len();
    let mut mean = Array1::<f64>::zeros(d);
    for p in points {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.mapv_inplace(|v| v / n as f64);
    let mut cov = Array2::<f64>::zeros((d, d));
    for p in points {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in 0..=i {
                cov[[i, j]] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[[i, j]] /= n as f64;
            cov[[j, i]] = cov[[i, j]];
        }
    }
    (mean, cov)
}

fn kmeanspp_means(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Array1<f64>> {
    let n = points.len();
    let mut means: Vec<Array1<f64>> = Vec::with_capacity(k);
    means.push(Array1::from(points[rng.random_range(0..n)].clone()));
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| p.iter().zip(means[0].iter()).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    while means.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let m = Array1::from(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d2: f64 = p.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
        means.push(m);
    }
    means
}

/// Fits a GMM to the patch vectors by expectation-maximization.
///
/// Initialization: k-means++ seeded means, global sample covariance for every
/// component, uniform weights. Collapsed components (weight < 1e-8) are
/// re-seeded from a random sample.
pub fn em_fit(patches: &PatchSet, cfg: &EmConfig) -> Result<EmFit> {
    em_fit_points(patches.vectors(), cfg)
}

pub fn em_fit_points(points: &[Vec<f64>], cfg: &EmConfig) -> Result<EmFit> {
    let n = points.len();
    let k = cfg.k;
    if k == 0 {
        return Err(Error::invalid("em: K must be >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("em: K = {k} exceeds sample count {n}")));
    }
    let d = points[0].len();
    let mut rng = seeded_rng(cfg.seed);

    let (_, global_cov) = sample_mean_cov(points);
    let trace: f64 = (0..d).map(|i| global_cov[[i, i]]).sum();
    let floor = if cfg.cov_floor > 0.0 { cfg.cov_floor } else { 1e-6 * trace / d as f64 };
    let floor = floor.max(1e-12);

    let mut floored_global = global_cov.clone();
    for i in 0..d {
        floored_global[[i, i]] += floor;
    }

    let means = kmeanspp_means(points, k, &mut rng);
    let mut components: Vec<GmmComponent> = means
        .into_iter()
        .map(|m| GmmComponent::new(m, floored_global.clone()))
        .collect::<Result<_>>()?;
    let mut weights = vec![1.0 / k as f64; k];

    let mut loglik_trace = Vec::new();
    let mut prev_loglik = f64::NEG_INFINITY;
    // responsibilities in linear domain, one row per sample
    let mut resp = vec![vec![0.0f64; k]; n];

    for _iter in 0..cfg.max_iters {
        // E-step
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let mut loglik = 0.0;
        for (i, x) in points.iter().enumerate() {
            let mut terms: Vec<f64> = (0..k)
                .map(|c| log_w[c] + gaussian_logpdf_prepared(x, &components[c]))
                .collect();
            let lse = logsumexp(&terms);
            loglik += lse;
            for t in &mut terms {
                *t = (*t - lse).exp();
            }
            resp[i].copy_from_slice(&terms);
        }
        loglik_trace.push(loglik);

        // M-step
        let mut collapsed = Vec::new();
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i][c]).sum();
            if nk / (n as f64) < 1e-8 {
                collapsed.push(c);
                continue;
            }
            let mut mean = Array1::<f64>::zeros(d);
            for (i, x) in points.iter().enumerate() {
                let r = resp[i][c];
                for (m, &v) in mean.iter_mut().zip(x) {
                    *m += r * v;
                }
            }
            mean.mapv_inplace(|v| v / nk);
            let mut cov = Array2::<f64>::zeros((d, d));
            for (i, x) in points.iter().enumerate() {
                let r = resp[i][c];
                for a in 0..d {
                    let da = x[a] - mean[a];
                    for b in 0..=a {
                        cov[[a, b]] += r * da * (x[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    cov[[a, b]] /= nk;
                    cov[[b, a]] = cov[[a, b]];
                }
                cov[[a, a]] += floor;
            }
            weights[c] = nk / n as f64;
            components[c] = GmmComponent::new(mean, cov)?;
        }
        for c in collapsed {
            warn!("em: component {c} collapsed; re-seeding from a random sample");
            let pick = rng.random_range(0..n);
            components[c] = GmmComponent::new(Array1::from(points[pick].clone()), floored_global.clone())?;
            weights[c] = 1e-6;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }

        let loglik = *loglik_trace.last().unwrap();
        if prev_loglik.is_finite() {
            let rel = (loglik - prev_loglik).abs() / loglik.abs().max(1.0);
            if rel < cfg.tol {
                break;
            }
        }
        prev_loglik = loglik;
    }

    let model = GmmModel::new(weights, components)?;
    // trailing evaluation so the trace ends at the returned model's loglik
    let mut final_loglik = 0.0;
    for x in points {
        final_loglik += model.logpdf(x)?;
    }
    loglik_trace.push(final_loglik);
    Ok(EmFit { model, loglik_trace })
}

/// EPLL value: −(1/N) Σ_i log p_θ(P_i x).
pub fn epll_value(model: &GmmModel, image: &Image, cfg: &PatchConfig) -> Result<f64> {
    if model.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "epll: model dim {} != patch dim {}",
            model.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    let n = patches.len() as f64;
    let mut total = 0.0;
    for v in patches.vectors() {
        total += model.logpdf(v)?;
    }
    Ok(-total / n)
}

/// Gradient of [`epll_value`] with respect to the pixels: per patch
/// (1/N) Σ_k γ_k Σ_k⁻¹ (v − m_k), scattered through the extraction adjoint.
pub fn epll_grad(model: &GmmModel, image: &Image, cfg: &PatchConfig) -> Result<Image> {
    if model.dim() != cfg.dim() {
        return Err(Error::invalid(format!(
            "epll: model dim {} != patch dim {}",
            model.dim(),
            cfg.dim()
        )));
    }
    let patches = extract_patches(image, cfg)?;
    let n = patches.len() as f64;
    let d = model.dim();
    let mut grads = Vec::with_capacity(patches.len());
    for v in patches.vectors() {
        let log_resp = model.log_responsibilities(v)?;
        let mut g = vec![0.0f64; d];
        for (k, comp) in model.components().iter().enumerate() {
            let gamma = log_resp[k].exp();
            if gamma == 0.0 {
                continue;
            }
            let diff: Vec<f64> = v.iter().zip(comp.mean.iter()).map(|(a, b)| a - b).collect();
            let solved = comp.chol().solve(&diff);
            for (gi, si) in g.iter_mut().zip(&solved) {
                *gi += gamma * si;
            }
        }
        for gi in &mut g {
            *gi /= n;
        }
        grads.push(g);
    }
    let gset = PatchSet::new(d, grads, patches.origins().to_vec())?;
    scatter_patch_gradients(&gset, image.width(), image.height(), cfg)
}
