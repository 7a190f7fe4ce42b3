//! Small numerical helpers: log-sum-exp, Cholesky factorization and solves.

use ndarray::{Array1, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Numerically stable log(Σ exp(v_i)). Returns -inf for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Seeded RNG used everywhere determinism matters.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn new(matrix: &Array2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::invalid("cholesky: matrix must be square"));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut sum = matrix[[i, j]];
                for k in 0..j {
                    sum -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::numerics(format!(
                            "cholesky: matrix not positive definite (pivot {sum:e} at {i})"
                        )));
                    }
                    l[[i, i]] = sum.sqrt();
                } else {
                    l[[i, j]] = sum / l[[j, j]];
                }
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// log |A| of the factored matrix.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.lower[[i, i]].ln()).sum::<f64>() * 2.0
    }

    /// Solves L w = b in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.lower[[i, k]] * b[k];
            }
            b[i] = v / self.lower[[i, i]];
        }
    }

    /// Solves Lᵀ w = b in place.
    pub fn solve_lower_transpose(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.lower[[k, i]] * b[k];
            }
            b[i] = v / self.lower[[i, i]];
        }
    }

    /// Solves A x = b for the factored matrix A.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut w = b.to_vec();
        self.solve_lower(&mut w);
        self.solve_lower_transpose(&mut w);
        w
    }

    /// A⁻¹ as a dense matrix.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[[i, j]] = col[i];
            }
        }
        inv
    }
}

/// Solves A x = b via Cholesky for SPD A.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let chol = Cholesky::new(a)?;
    Ok(Array1::from(chol.solve(b.as_slice().unwrap())))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
