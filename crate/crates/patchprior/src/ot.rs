//! Discrete optimal transport engine.
//!
//! Squared-Euclidean costs throughout. Provides an exact LP oracle
//! (transportation simplex with a dual-feasibility certificate), a semi-dual
//! stochastic ascent solver, log-domain Sinkhorn iterations for the entropic
//! problem, a damped variant for the semi-unbalanced problem (second marginal
//! penalized by ρ·KL), the debiased Sinkhorn divergence, and the support-point
//! gradients used by the patch priors.
//!
//! Weights are general (not necessarily uniform); with uniform weights the
//! iterations reduce to the familiar "+ε log M / +ε log N" form.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logsumexp, seeded_rng};
use crate::measure::DiscreteMeasure;

/// Pairwise squared distances ‖x_i − y_k‖².
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array2<f64>> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid(format!(
            "cost matrix: measure dims {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let rows: Vec<Vec<f64>> = mu
        .points()
        .par_iter()
        .map(|x| {
            nu.points()
                .iter()
                .map(|y| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect();
    let n = mu.len();
    let m = nu.len();
    let mut c = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            c[[i, k]] = v;
        }
    }
    Ok(c)
}

/// Coupling weights with marginal bookkeeping.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub weights: Array2<f64>,
}

impl TransportPlan {
    pub fn row_marginals(&self) -> Vec<f64> {
        (0..self.weights.nrows()).map(|i| self.weights.row(i).sum()).collect()
    }

    pub fn column_marginals(&self) -> Vec<f64> {
        (0..self.weights.ncols()).map(|k| self.weights.column(k).sum()).collect()
    }

    pub fn cost(&self, c: &Array2<f64>) -> f64 {
        self.weights.iter().zip(c.iter()).map(|(p, c)| p * c).sum()
    }
}

/// Exact solution of the transportation LP.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub value: f64,
    pub plan: TransportPlan,
    /// Optimal duals: value = ⟨μ, u⟩ + ⟨ν, v⟩, u_i + v_k ≤ c_ik.
    pub dual_u: Vec<f64>,
    pub dual_v: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-11;

/// Exact squared Wasserstein-2 distance between small discrete measures via
/// the transportation simplex (MODI / u-v method, Bland's rule). Zero-weight
/// atoms are pruned before solving. Certified on exit: feasibility,
/// complementary slackness, and a zero duality gap.
pub fn w2_exact_small(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ExactSolution> {
    let mu_p = mu.pruned();
    let nu_p = nu.pruned();
    if mu_p.len() * nu_p.len() > 10_000 {
        return Err(Error::invalid(format!(
            "exact LP oracle limited to N*M <= 10^4, got {}x{}",
            mu_p.len(),
            nu_p.len()
        )));
    }
    let c = cost_matrix(&mu_p, &nu_p)?;
    let sol = transportation_simplex(mu_p.weights(), nu_p.weights(), &c)?;

    // map the pruned solution back onto the full support
    if mu_p.len() == mu.len() && nu_p.len() == nu.len() {
        return Ok(sol);
    }
    let keep_rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let keep_cols: Vec<usize> = (0..nu.len()).filter(|&k| nu.weights()[k] > 0.0).collect();
    let mut weights = Array2::zeros((mu.len(), nu.len()));
    let mut dual_u = vec![0.0; mu.len()];
    let mut dual_v = vec![0.0; nu.len()];
    for (pi, &i) in keep_rows.iter().enumerate() {
        dual_u[i] = sol.dual_u[pi];
        for (pk, &k) in keep_cols.iter().enumerate() {
            weights[[i, k]] = sol.plan.weights[[pi, pk]];
        }
    }
    for (pk, &k) in keep_cols.iter().enumerate() {
        dual_v[k] = sol.dual_v[pk];
    }
    Ok(ExactSolution { value: sol.value, plan: TransportPlan { weights }, dual_u, dual_v })
}

fn transportation_simplex(a: &[f64], b: &[f64], c: &Array2<f64>) -> Result<ExactSolution> {
    let n = a.len();
    let m = b.len();
    let scale = c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let enter_tol = SIMPLEX_TOL * scale.max(1.0);

    // northwest-corner initial basis: exactly n+m-1 cells, zero flows allowed
    let mut flow = Array2::<f64>::zeros((n, m));
    let mut basic = vec![vec![false; m]; n];
    // basis tree adjacency: columns per row, rows per column
    let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    let add_edge = |basic: &mut Vec<Vec<bool>>,
                        row_adj: &mut Vec<Vec<usize>>,
                        col_adj: &mut Vec<Vec<usize>>,
                        i: usize,
                        j: usize| {
        basic[i][j] = true;
        row_adj[i].push(j);
        col_adj[j].push(i);
    };
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    {
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]);
            flow[[i, j]] = q;
            add_edge(&mut basic, &mut row_adj, &mut col_adj, i, j);
            supply[i] -= q;
            demand[j] -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            // advance one index only; ties keep a degenerate basic cell
            if supply[i] <= demand[j] && i < n - 1 {
                i += 1;
            } else if j < m - 1 {
                j += 1;
            } else {
                i += 1;
            }
        }
    }

    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let max_pivots = 50 * (n + m) * (n + m) + 10_000;
    // Dantzig (most negative reduced cost) converges fast; fall back to
    // Bland's rule after a while to rule out degenerate cycling.
    let bland_after = 10 * (n + m) * (n + m) + 2_000;

    for pivot in 0..max_pivots {
        compute_duals(&row_adj, &col_adj, c, &mut u, &mut v)?;

        let mut entering = None;
        if pivot < bland_after {
            let mut best = -enter_tol;
            for i in 0..n {
                for j in 0..m {
                    let r = c[[i, j]] - u[i] - v[j];
                    if r < best && !basic[i][j] {
                        best = r;
                        entering = Some((i, j));
                    }
                }
            }
        } else {
            'scan: for i in 0..n {
                for j in 0..m {
                    if !basic[i][j] && c[[i, j]] - u[i] - v[j] < -enter_tol {
                        entering = Some((i, j));
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            // optimal: assemble certificate
            let plan = TransportPlan { weights: flow };
            let primal = plan.cost(c);
            let dual: f64 = a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>()
                + b.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
            let gap = (primal - dual).abs();
            if gap > 1e-7 * scale.max(1.0) {
                return Err(Error::numerics(format!(
                    "transportation simplex: duality gap {gap:e} exceeds tolerance"
                )));
            }
            let row_err = plan
                .row_marginals()
                .iter()
                .zip(a)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            let col_err = plan
                .column_marginals()
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            if row_err.max(col_err) > 1e-9 {
                return Err(Error::numerics("transportation simplex: infeasible plan"));
            }
            return Ok(ExactSolution { value: primal, plan, dual_u: u, dual_v: v });
        };

        // cycle: unique tree path from row ei to column ej plus the entering cell
        let path = basis_path(&row_adj, &col_adj, ei, ej)
            .ok_or_else(|| Error::numerics("transportation simplex: basis lost connectivity"))?;
        let mut cycle = Vec::with_capacity(path.len() + 1);
        cycle.push((ei, ej));
        cycle.extend(path);
        // minus cells are the odd positions
        let mut theta = f64::INFINITY;
        let mut leave_idx = usize::MAX;
        for (pos, &(i, j)) in cycle.iter().enumerate().skip(1).step_by(2) {
            let f = flow[[i, j]];
            if f < theta - 1e-15
                || (f < theta + 1e-15 && (leave_idx == usize::MAX || (i, j) < cycle[leave_idx]))
            {
                theta = f.min(theta);
                leave_idx = pos;
            }
        }
        let theta = if theta.is_finite() { theta } else { 0.0 };
        for (pos, &(i, j)) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                flow[[i, j]] += theta;
            } else {
                flow[[i, j]] -= theta;
                if flow[[i, j]] < 0.0 {
                    flow[[i, j]] = 0.0;
                }
            }
        }
        let (li, lj) = cycle[leave_idx];
        basic[li][lj] = false;
        row_adj[li].retain(|&j| j != lj);
        col_adj[lj].retain(|&i| i != li);
        add_edge(&mut basic, &mut row_adj, &mut col_adj, ei, ej);
    }
    Err(Error::numerics("transportation simplex: pivot limit exhausted"))
}

/// Solves u_i + v_j = c_ij over the basis spanning tree by BFS, u_0 = 0.
fn compute_duals(
    row_adj: &[Vec<usize>],
    col_adj: &[Vec<usize>],
    c: &Array2<f64>,
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let n = u.len();
    let m = v.len();
    let mut u_set = vec![false; n];
    let mut v_set = vec![false; m];
    u[0] = 0.0;
    u_set[0] = true;
    // nodes: rows are (true, i), columns (false, j)
    let mut queue = std::collections::VecDeque::with_capacity(n + m);
    queue.push_back((true, 0usize));
    let mut visited = 1usize;
    while let Some((is_row, idx)) = queue.pop_front() {
        if is_row {
            for &j in &row_adj[idx] {
                if !v_set[j] {
                    v[j] = c[[idx, j]] - u[idx];
                    v_set[j] = true;
                    visited += 1;
                    queue.push_back((false, j));
                }
            }
        } else {
            for &i in &col_adj[idx] {
                if !u_set[i] {
                    u[i] = c[[i, idx]] - v[idx];
                    u_set[i] = true;
                    visited += 1;
                    queue.push_back((true, i));
                }
            }
        }
    }
    if visited == n + m {
        Ok(())
    } else {
        Err(Error::numerics("transportation simplex: basis is not spanning"))
    }
}

/// Tree path of basic cells from row `start_row` to column `target_col`,
/// found by BFS with parent pointers.
fn basis_path(
    row_adj: &[Vec<usize>],
    col_adj: &[Vec<usize>],
    start_row: usize,
    target_col: usize,
) -> Option<Vec<(usize, usize)>> {
    let n = row_adj.len();
    let m = col_adj.len();
    // parent of a column node is the row it was reached from and vice versa
    let mut col_parent = vec![usize::MAX; m];
    let mut row_parent = vec![usize::MAX; n];
    let mut visited_rows = vec![false; n];
    let mut visited_cols = vec![false; m];
    visited_rows[start_row] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((true, start_row));
    'bfs: while let Some((is_row, idx)) = queue.pop_front() {
        if is_row {
            for &j in &row_adj[idx] {
                if !visited_cols[j] {
                    visited_cols[j] = true;
                    col_parent[j] = idx;
                    if j == target_col {
                        break 'bfs;
                    }
                    queue.push_back((false, j));
                }
            }
        } else {
            for &i in &col_adj[idx] {
                if !visited_rows[i] {
                    visited_rows[i] = true;
                    row_parent[i] = idx;
                    queue.push_back((true, i));
                }
            }
        }
    }
    if !visited_cols[target_col] {
        return None;
    }
    // walk back: col -> row -> col -> ... -> start_row
    let mut cells = Vec::new();
    let mut col = target_col;
    loop {
        let row = col_parent[col];
        cells.push((row, col));
        if row == start_row {
            break;
        }
        let prev_col = row_parent[row];
        cells.push((row, prev_col));
        col = prev_col;
    }
    Some(cells)
}

/// c-transform ψ^c(x) = min_k ‖x−y_k‖² − ψ_k; ties broken by smallest k.
pub fn c_transform(psi: &[f64], x: &[f64], nu: &DiscreteMeasure) -> Result<(f64, usize)> {
    if psi.len() != nu.len() {
        return Err(Error::invalid("c_transform: psi length must match nu support"));
    }
    if nu.is_empty() {
        return Err(Error::invalid("c_transform: empty measure"));
    }
    if x.len() != nu.dim() {
        return Err(Error::invalid("c_transform: point dim mismatch"));
    }
    let mut best = f64::INFINITY;
    let mut best_k = 0;
    for (k, y) in nu.points().iter().enumerate() {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let val = d2 - psi[k];
        if val < best {
            best = val;
            best_k = k;
        }
    }
    Ok((best, best_k))
}

/// Semi-dual objective F(ψ) = Σ_i μ_i ψ^c(x_i) + Σ_k ν_k ψ_k.
pub fn semidual_objective(mu: &DiscreteMeasure, nu: &DiscreteMeasure, psi: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &w) in mu.points().iter().zip(mu.weights()) {
        let (v, _) = c_transform(psi, x, nu)?;
        total += w * v;
    }
    total += nu.weights().iter().zip(psi).map(|(w, p)| w * p).sum::<f64>();
    Ok(total)
}

/// Settings for the stochastic semi-dual ascent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemidualConfig {
    pub steps: usize,
    /// Step size at step t is `step_scale / sqrt(t+1)`.
    pub step_scale: f64,
    pub seed: u64,
    /// Record F(ψ̄) every this many steps (0 = no trace).
    pub checkpoint_every: usize,
}

impl Default for SemidualConfig {
    fn default() -> Self {
        SemidualConfig { steps: 10_000, step_scale: 1.0, seed: 0, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SemidualResult {
    /// Averaged iterate ψ̄.
    pub psi: Vec<f64>,
    /// F(ψ̄) on exit.
    pub objective: f64,
    /// (step, F(ψ̄)) checkpoints when requested.
    pub trace: Vec<(usize, f64)>,
}

/// Stochastic supergradient ascent on the Wasserstein-2 semi-dual with
/// Polyak-Ruppert averaging, as used for large-scale WPP evaluations.
pub fn w2_semidual_ascent(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SemidualConfig,
) -> Result<SemidualResult> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid("semidual ascent: dimension mismatch"));
    }
    let m = nu.len();
    let mut rng = seeded_rng(cfg.seed);
    let mut psi = vec![0.0f64; m];
    let mut psi_bar = vec![0.0f64; m];
    let mut trace = Vec::new();

    // inverse-CDF sampling of i ~ mu
    let mut cdf = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for &w in mu.weights() {
        acc += w;
        cdf.push(acc);
    }

    for t in 0..cfg.steps {
        let r: f64 = rng.random::<f64>() * acc;
        let i = cdf.partition_point(|&c| c < r).min(mu.len() - 1);
        let (_, sigma) = c_transform(&psi, mu.point(i), nu)?;
        let gamma = cfg.step_scale / ((t + 1) as f64).sqrt();
        for (k, p) in psi.iter_mut().enumerate() {
            let g = nu.weights()[k] - if k == sigma { 1.0 } else { 0.0 };
            *p += gamma * g;
        }
        let w_new = 1.0 / (t + 1) as f64;
        for (b, &p) in psi_bar.iter_mut().zip(&psi) {
            *b += w_new * (p - *b);
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            trace.push(((t + 1), semidual_objective(mu, nu, &psi_bar)?));
        }
    }
    let objective = semidual_objective(mu, nu, &psi_bar)?;
    Ok(SemidualResult { psi: psi_bar, objective, trace })
}

/// Entropic solver settings. `rho = None` is the balanced problem; finite
/// `rho` penalizes the second marginal by ρ·KL(proj₂π, ν).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub max_iter: usize,
    /// Sup-norm tolerance on the potential change.
    pub tol: f64,
}

impl SinkhornConfig {
    pub fn balanced(epsilon: f64) -> Self {
        SinkhornConfig { epsilon, rho: None, max_iter: 100_000, tol: 1e-9 }
    }

    pub fn semi_unbalanced(epsilon: f64, rho: f64) -> Self {
        SinkhornConfig { epsilon, rho: Some(rho), max_iter: 100_000, tol: 1e-9 }
    }

    fn damping(&self) -> f64 {
        match self.rho {
            None => 1.0,
            Some(rho) => rho / (rho + self.epsilon),
        }
    }
}

/// Converged (or iteration-capped) dual potentials.
#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_sinkhorn_inputs(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid("sinkhorn: dimension mismatch"));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::invalid("sinkhorn: epsilon must be positive"));
    }
    if let Some(rho) = cfg.rho {
        if !(rho > 0.0) {
            return Err(Error::invalid("sinkhorn: rho must be positive"));
        }
    }
    if cfg.max_iter == 0 {
        return Err(Error::invalid("sinkhorn: max_iter must be >= 1"));
    }
    Ok(())
}

/// Log-domain Sinkhorn iterations; handles balanced and semi-unbalanced
/// (damped ψ update) problems. Zero-weight atoms are pruned by log-weighting
/// (they never receive mass).
pub fn sinkhorn(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<DualPotentials> {
    check_sinkhorn_inputs(mu, nu, cfg)?;
    let c = cost_matrix(mu, nu)?;
    sinkhorn_with_cost(mu.weights(), nu.weights(), &c, cfg)
}

/// Same as [`sinkhorn`] for a precomputed cost matrix.
pub fn sinkhorn_with_cost(
    mu_w: &[f64],
    nu_w: &[f64],
    c: &Array2<f64>,
    cfg: &SinkhornConfig,
) -> Result<DualPotentials> {
    let n = mu_w.len();
    let m = nu_w.len();
    let eps = cfg.epsilon;
    let damping = cfg.damping();
    let ln_mu: Vec<f64> = mu_w.iter().map(|&w| w.ln()).collect(); // -inf for zero weights
    let ln_nu: Vec<f64> = nu_w.iter().map(|&w| w.ln()).collect();

    let mut phi = vec![0.0f64; n];
    let mut psi = vec![0.0f64; m];
    let mut iterations = 0;
    let mut converged = false;
    let parallel = n * m >= 16_384;

    let phi_update = |psi: &[f64], phi: &mut [f64]| {
        if parallel {
            let new: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut local = vec![0.0f64; m];
                    for k in 0..m {
                        local[k] = ln_nu[k] + (psi[k] - c[[i, k]]) / eps;
                    }
                    -eps * logsumexp(&local)
                })
                .collect();
            phi.copy_from_slice(&new);
        } else {
            let mut buf = vec![0.0f64; m];
            for i in 0..n {
                for k in 0..m {
                    buf[k] = ln_nu[k] + (psi[k] - c[[i, k]]) / eps;
                }
                phi[i] = -eps * logsumexp(&buf);
            }
        }
    };

    let mut buf = vec![0.0f64; n];
    let mut new_phi = vec![0.0f64; n];
    while iterations < cfg.max_iter {
        iterations += 1;
        phi_update(&psi, &mut new_phi);
        let mut dphi_max = 0.0f64;
        for (o, nv) in phi.iter().zip(&new_phi) {
            dphi_max = dphi_max.max((o - nv).abs());
        }
        phi.copy_from_slice(&new_phi);
        // psi_k = -damping * eps * lse_i( ln mu_i + (phi_i - c_ik)/eps )
        let mut dpsi_max = 0.0f64;
        for k in 0..m {
            for i in 0..n {
                buf[i] = ln_mu[i] + (phi[i] - c[[i, k]]) / eps;
            }
            let new = -damping * eps * logsumexp(&buf);
            dpsi_max = dpsi_max.max((psi[k] - new).abs());
            psi[k] = new;
        }
        if dpsi_max.max(dphi_max) < cfg.tol {
            converged = true;
            break;
        }
    }
    // final phi update so the plan's row marginals are exactly feasible
    phi_update(&psi, &mut phi);
    Ok(DualPotentials { phi, psi, epsilon: eps, rho: cfg.rho, iterations, converged })
}

/// Plug-in value at the potentials.
///
/// Balanced: ⟨μ, φ̂⟩ + ⟨ν, ψ̂⟩ (the coupling term vanishes at the fixed
/// point). Semi-unbalanced: ⟨μ, φ̂⟩ + Σ_k ν_k ρ(1 − exp(−ψ̂_k/ρ)), the convex
/// conjugate of the ρ·KL marginal penalty; it converges to the balanced
/// expression as ρ → ∞.
pub fn sinkhorn_value(mu: &DiscreteMeasure, nu: &DiscreteMeasure, pots: &DualPotentials) -> Result<f64> {
    if pots.phi.len() != mu.len() || pots.psi.len() != nu.len() {
        return Err(Error::invalid("sinkhorn_value: potential lengths do not match measures"));
    }
    let t1: f64 = mu.weights().iter().zip(&pots.phi).map(|(w, p)| w * p).sum();
    let t2: f64 = match pots.rho {
        None => nu.weights().iter().zip(&pots.psi).map(|(w, p)| w * p).sum(),
        Some(rho) => nu
            .weights()
            .iter()
            .zip(&pots.psi)
            .map(|(w, p)| w * rho * (1.0 - (-p / rho).exp()))
            .sum(),
    };
    Ok(t1 + t2)
}

/// Gradient of the entropic value with respect to each support point of μ:
/// 2 μ_i Σ_k softmax_k(ln ν_k + (ψ̂_k − c_ik)/ε) · (x_i − y_k).
pub fn sinkhorn_point_grads(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pots: &DualPotentials,
) -> Result<Vec<Vec<f64>>> {
    if pots.psi.len() != nu.len() {
        return Err(Error::invalid("sinkhorn_grad: psi length does not match nu"));
    }
    let eps = pots.epsilon;
    let dim = mu.dim();
    let grads: Vec<Vec<f64>> = mu
        .points()
        .par_iter()
        .zip(mu.weights().par_iter())
        .map(|(x, &w)| {
            let mut logits: Vec<f64> = Vec::with_capacity(nu.len());
            for (k, y) in nu.points().iter().enumerate() {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                logits.push(nu.weights()[k].ln() + (pots.psi[k] - d2) / eps);
            }
            let lse = logsumexp(&logits);
            let mut g = vec![0.0f64; dim];
            for (k, y) in nu.points().iter().enumerate() {
                let sm = (logits[k] - lse).exp();
                if sm == 0.0 {
                    continue;
                }
                for d in 0..dim {
                    g[d] += sm * (x[d] - y[d]);
                }
            }
            for v in &mut g {
                *v *= 2.0 * w;
            }
            g
        })
        .collect();
    Ok(grads)
}

/// Entropic plan π_ik = μ_i ν_k exp((φ_i + ψ_k − c_ik)/ε). The solver's final
/// φ update makes the row marginals match μ to machine precision.
pub fn plan_from_potentials(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pots: &DualPotentials,
) -> Result<TransportPlan> {
    let c = cost_matrix(mu, nu)?;
    let n = mu.len();
    let m = nu.len();
    let mut weights = Array2::zeros((n, m));
    for i in 0..n {
        for k in 0..m {
            weights[[i, k]] = mu.weights()[i]
                * nu.weights()[k]
                * ((pots.phi[i] + pots.psi[k] - c[[i, k]]) / pots.epsilon).exp();
        }
    }
    Ok(TransportPlan { weights })
}

/// Primal objective of a plan: ⟨C, π⟩ + ε·KL(π, μ⊗ν) (+ ρ·KL(proj₂π, ν) when
/// semi-unbalanced). Used as a consistency oracle against the plug-in value.
pub fn primal_value(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    plan: &TransportPlan,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let c = cost_matrix(mu, nu)?;
    let mut total = plan.cost(&c);
    for i in 0..mu.len() {
        for k in 0..nu.len() {
            let p = plan.weights[[i, k]];
            if p > 0.0 {
                total += cfg.epsilon * p * (p / (mu.weights()[i] * nu.weights()[k])).ln();
            }
        }
    }
    if let Some(rho) = cfg.rho {
        for (k, &q) in plan.column_marginals().iter().enumerate() {
            if q > 0.0 {
                total += rho * q * (q / nu.weights()[k]).ln();
            }
        }
    }
    Ok(total)
}

/// Debiased Sinkhorn divergence
/// W²₂ε(μ,ν) − ½W²₂ε(μ,μ) − ½W²₂ε(ν,ν).
pub fn sinkhorn_divergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<f64> {
    let cfg = SinkhornConfig { epsilon, rho: None, max_iter, tol };
    let w_mn = sinkhorn_value(mu, nu, &sinkhorn(mu, nu, &cfg)?)?;
    let w_mm = sinkhorn_value(mu, mu, &sinkhorn(mu, mu, &cfg)?)?;
    let w_nn = sinkhorn_value(nu, nu, &sinkhorn(nu, nu, &cfg)?)?;
    Ok(w_mn - 0.5 * w_mm - 0.5 * w_nn)
}
