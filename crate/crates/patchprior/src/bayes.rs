//! Closed-form Bayes oracles for linear-Gaussian models: the GMM posterior,
//! the Gaussian MMSE/BLUE estimator, and the 1-D bimodal reference example
//! used to calibrate the samplers.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::gmm::{GmmComponent, GmmModel};
use crate::math::{logsumexp, Cholesky};

/// Posterior of X ~ Σ α_k N(m_k, Σ_k) given y = F x + ξ, ξ ~ N(0, σ²I),
/// for an explicit matrix F. Returns the posterior mixture with
/// Σ̃_k = ((1/σ²)FᵀF + Σ_k⁻¹)⁻¹,
/// m̃_k = Σ̃_k((1/σ²)Fᵀy + Σ_k⁻¹m_k), and log-domain normalized weights
/// log α̃_k ∝ log α_k + ½(log|Σ̃_k| − log|Σ_k|) + ½(m̃_kᵀΣ̃_k⁻¹m̃_k − m_kᵀΣ_k⁻¹m_k).
pub fn gmm_posterior(prior: &GmmModel, f: &Array2<f64>, sigma: f64, y: &[f64]) -> Result<GmmModel> {
    let d = prior.dim();
    if f.ncols() != d {
        return Err(Error::invalid("gmm_posterior: F column count must match prior dim"));
    }
    if f.nrows() != y.len() {
        return Err(Error::invalid("gmm_posterior: F row count must match observation"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("gmm_posterior: sigma must be positive"));
    }
    let inv_s2 = 1.0 / (sigma * sigma);
    let ftf = f.t().dot(f);
    let yv = Array1::from(y.to_vec());
    let fty = f.t().dot(&yv);

    let mut log_tilde = Vec::with_capacity(prior.k());
    let mut components = Vec::with_capacity(prior.k());
    for (k, comp) in prior.components().iter().enumerate() {
        let prior_inv = comp.chol().inverse();
        // precision of the posterior component
        let mut precision = prior_inv.clone();
        precision.scaled_add(inv_s2, &ftf);
        let prec_chol = Cholesky::new(&precision)
            .map_err(|e| Error::numerics(format!("gmm_posterior: component {k}: {e}")))?;
        let cov_tilde = prec_chol.inverse();
        let rhs = &fty * inv_s2 + prior_inv.dot(&comp.mean);
        let m_tilde = Array1::from(prec_chol.solve(rhs.as_slice().unwrap()));
        // quadratic forms for the weight update
        let quad_tilde = m_tilde.dot(&precision.dot(&m_tilde));
        let quad_prior = comp.mean.dot(&prior_inv.dot(&comp.mean));
        let logdet_tilde = -prec_chol.log_det();
        let log_w = prior.weights()[k].ln()
            + 0.5 * (logdet_tilde - comp.log_det())
            + 0.5 * (quad_tilde - quad_prior);
        log_tilde.push(log_w);
        // symmetrize against roundoff before refactorizing
        let mut cov = cov_tilde;
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
                cov[[i, j]] = avg;
                cov[[j, i]] = avg;
            }
        }
        components.push(GmmComponent::new(m_tilde, cov)?);
    }
    let lse = logsumexp(&log_tilde);
    let weights: Vec<f64> = log_tilde.iter().map(|lw| (lw - lse).exp()).collect();
    GmmModel::new(weights, components)
}

/// Gaussian MMSE / best linear unbiased estimator:
/// m + ΣFᵀ(FΣFᵀ + σ²I)⁻¹(y − Fm).
pub fn mmse_gaussian(
    mean: &[f64],
    cov: &Array2<f64>,
    f: &Array2<f64>,
    sigma: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d || f.ncols() != d || f.nrows() != y.len() {
        return Err(Error::invalid("mmse_gaussian: dimension mismatch"));
    }
    let m = Array1::from(mean.to_vec());
    let yv = Array1::from(y.to_vec());
    let residual = &yv - &f.dot(&m);
    let mut gram = f.dot(cov).dot(&f.t());
    for i in 0..y.len() {
        gram[[i, i]] += sigma * sigma;
    }
    let chol = Cholesky::new(&gram)
        .map_err(|e| Error::numerics(format!("mmse_gaussian: singular system: {e}")))?;
    let solved = Array1::from(chol.solve(residual.as_slice().unwrap()));
    let estimate = &m + &cov.dot(&f.t()).dot(&solved);
    Ok(estimate.to_vec())
}

/// Fixed parameters of the 1-D bimodal example:
/// X ~ ½N(−1, ε²) + ½N(1, ε²), F = I, ξ ~ N(0, σ²), ε² = 0.05², σ² = 0.1.
pub const BIMODAL_EPS2: f64 = 0.0025;
pub const BIMODAL_SIGMA2: f64 = 0.1;

/// Closed-form reference quantities of the bimodal example at observation y.
#[derive(Debug, Clone)]
pub struct BimodalReference {
    pub map: f64,
    pub mmse: f64,
    /// Posterior component means (m̃₁ near +1, m̃₂ near −1 for y ≈ 0).
    pub means: (f64, f64),
    /// Shared posterior component variance σ̃².
    pub variance: f64,
    /// Normalized posterior component weights.
    pub weights: (f64, f64),
}

impl BimodalReference {
    /// Posterior density at x.
    pub fn posterior_density(&self, x: f64) -> f64 {
        let norm = |m: f64| {
            (-(x - m) * (x - m) / (2.0 * self.variance)).exp()
                / (2.0 * std::f64::consts::PI * self.variance).sqrt()
        };
        self.weights.0 * norm(self.means.0) + self.weights.1 * norm(self.means.1)
    }
}

fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// MAP objective of the example (negative log posterior up to constants).
fn bimodal_map_objective(x: f64, y: f64) -> f64 {
    (y - x) * (y - x) / (2.0 * BIMODAL_SIGMA2) + (x * x + 1.0) / (2.0 * BIMODAL_EPS2)
        - log_cosh(x / BIMODAL_EPS2)
}

/// MAP, MMSE and posterior parameters of the bimodal example. The MAP is
/// located by a grid scan over [−2, 2] refined by golden-section search; the
/// rest follows the closed forms.
pub fn bimodal_1d_reference(y: f64) -> BimodalReference {
    let (e2, s2) = (BIMODAL_EPS2, BIMODAL_SIGMA2);
    let eps = e2.sqrt();
    let variance = s2 * e2 / (s2 + e2);
    let m1 = (e2 * y + s2) / (e2 + s2);
    let m2 = (e2 * y - s2) / (e2 + s2);
    let a1 = (0.5 / eps) * ((0.5 / e2) * ((e2 * y + s2).powi(2) / (s2 * (e2 + s2)) - 1.0)).exp();
    let a2 = (0.5 / eps) * ((0.5 / e2) * ((e2 * y - s2).powi(2) / (s2 * (e2 + s2)) - 1.0)).exp();
    let wsum = a1 + a2;
    let weights = (a1 / wsum, a2 / wsum);
    let mmse = weights.0 * m1 + weights.1 * m2;

    // grid scan + golden-section refinement
    let grid = 4001;
    let mut best_x = 0.0;
    let mut best_v = f64::INFINITY;
    for i in 0..grid {
        let x = -2.0 + 4.0 * i as f64 / (grid - 1) as f64;
        let v = bimodal_map_objective(x, y);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    let mut lo = best_x - 4.0 / (grid - 1) as f64;
    let mut hi = best_x + 4.0 / (grid - 1) as f64;
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = hi - phi * (hi - lo);
        let d = lo + phi * (hi - lo);
        if bimodal_map_objective(c, y) < bimodal_map_objective(d, y) {
            hi = d;
        } else {
            lo = c;
        }
    }
    let map = 0.5 * (lo + hi);

    BimodalReference { map, mmse, means: (m1, m2), variance, weights }
}
