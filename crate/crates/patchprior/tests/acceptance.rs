//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Criterion 1 is split: the balanced OT anchors reproduce the published
//! figure-caption values; the two semi-unbalanced captions are additionally
//! checked against the certified optima of the semi-unbalanced objective
//! (two independent primal routes agree with the dual fixed point), because
//! the published numbers are not attainable by any primal-dual-consistent
//! solver; see `criterion_1c` for the measured deltas.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

use patchprior::alr::{alr_grad, alr_value, Discriminator};
use patchprior::bayes::{bimodal_1d_reference, gmm_posterior, mmse_gaussian, BIMODAL_EPS2, BIMODAL_SIGMA2};
use patchprior::error::Result;
use patchprior::flow::{
    patchnr_grad, patchnr_value, train_flow, FlowModel, FlowSpec, FlowTrainConfig,
};
use patchprior::forward::{
    data_grad, data_value, ellipse_phantom, DataTerm, ForwardOp, IdentityOp, InpaintModel,
    LinearOperator, RadonModel, SuperResModel,
};
use patchprior::gmm::{em_fit_points, epll_grad, epll_value, EmConfig, GmmComponent, GmmModel};
use patchprior::image::{bicubic_upsample, extract_patches, Image, PatchConfig};
use patchprior::math::seeded_rng;
use patchprior::measure::{patch_measure, DiscreteMeasure};
use patchprior::metrics::psnr;
use patchprior::ot::{
    plan_from_potentials, primal_value, sinkhorn, sinkhorn_value, w2_exact_small, SinkhornConfig,
};
use patchprior::recon::{
    inpaint_map, map_reconstruct, posterior_stats, ula_sample, InitScheme, MapConfig, ReconProblem,
    UlaConfig,
};
use patchprior::regularizer::{EpllPrior, Regularizer, SinkhornPrior, WppPrior, WppSolver};
use patchprior::tape::AdamParams;

fn figure_instance() -> (DiscreteMeasure, DiscreteMeasure) {
    let mu = DiscreteMeasure::new(
        (1..=4).map(|i| vec![i as f64]).collect(),
        vec![2.0 / 14.0, 3.0 / 14.0, 4.0 / 14.0, 5.0 / 14.0],
    )
    .unwrap();
    let nu = DiscreteMeasure::new(
        (1..=5).map(|i| vec![i as f64]).collect(),
        vec![3.0 / 35.0, 5.0 / 35.0, 7.0 / 35.0, 9.0 / 35.0, 11.0 / 35.0],
    )
    .unwrap();
    (mu, nu)
}

fn solve_value(mu: &DiscreteMeasure, nu: &DiscreteMeasure, eps: f64, rho: Option<f64>) -> f64 {
    let cfg = SinkhornConfig { epsilon: eps, rho, max_iter: 500_000, tol: 1e-12 };
    sinkhorn_value(mu, nu, &sinkhorn(mu, nu, &cfg).unwrap()).unwrap()
}

#[test]
fn criterion_1a_balanced_ot_anchors() {
    let start = Instant::now();
    let (mu, nu) = figure_instance();
    let lp = w2_exact_small(&mu, &nu).unwrap().value;
    assert!((lp - 0.714).abs() < 2e-3, "exact LP {lp} vs published 0.714");
    let w10 = solve_value(&mu, &nu, 10.0, None);
    assert!((w10 - 2.935).abs() < 2e-3, "sinkhorn eps=10 {w10} vs published 2.935");
    let w1 = solve_value(&mu, &nu, 1.0, None);
    assert!((w1 - 1.544).abs() < 2e-3, "sinkhorn eps=1 {w1} vs published 1.544");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "anchor computations took {elapsed:?}");
    println!(
        "ACCEPTANCE 1a PASS: balanced OT anchors (LP {lp:.6}, eps=10 {w10:.6}, eps=1 {w1:.6}) in {elapsed:?}"
    );
}

/// Certified optima of the semi-unbalanced objective on the captioned
/// instance, frozen from two independent primal solvers (SLSQP on the primal
/// and the damped dual fixed point, agreeing to ~1e-10).
const SEMI_CERTIFIED_RHO1: f64 = 1.254082;
const SEMI_CERTIFIED_RHO10: f64 = 1.447395;

#[test]
fn criterion_1b_semi_unbalanced_certified_oracle_values() {
    let (mu, nu) = figure_instance();
    for (rho, certified) in [(1.0, SEMI_CERTIFIED_RHO1), (10.0, SEMI_CERTIFIED_RHO10)] {
        let cfg = SinkhornConfig { epsilon: 1.0, rho: Some(rho), max_iter: 500_000, tol: 1e-13 };
        let pots = sinkhorn(&mu, &nu, &cfg).unwrap();
        let value = sinkhorn_value(&mu, &nu, &pots).unwrap();
        assert!(
            (value - certified).abs() < 2e-3,
            "rho {rho}: {value} vs certified {certified}"
        );
        // primal-dual consistency: the plan's primal objective matches
        let plan = plan_from_potentials(&mu, &nu, &pots).unwrap();
        let primal = primal_value(&mu, &nu, &plan, &cfg).unwrap();
        assert!((value - primal).abs() < 1e-6, "duality gap {}", (value - primal).abs());
    }
    println!(
        "ACCEPTANCE 1b PASS: semi-unbalanced values match the certified optima \
         ({SEMI_CERTIFIED_RHO1}, {SEMI_CERTIFIED_RHO10}) with zero duality gap"
    );
}

#[test]
fn criterion_1c_semi_unbalanced_published_values() {
    // The published example values are 1.272 (rho=1) and 1.453 (rho=10). The
    // certified optimum of min <C,pi> + eps KL(pi, mu (x) nu) + rho KL(proj2 pi, nu)
    // over row-feasible plans is 1.254082 / 1.447395 (verified by two
    // independent primal solvers and a zero duality gap), so the published
    // values are not reproducible by any consistent solver. This test states
    // the check as published and is expected to fail; the companion
    // criterion_1b pins the implementation to the certified optima.
    let (mu, nu) = figure_instance();
    let mut failures = Vec::new();
    for (rho, caption) in [(1.0, 1.272), (10.0, 1.453)] {
        let value = solve_value(&mu, &nu, 1.0, Some(rho));
        if (value - caption).abs() >= 2e-3 {
            failures.push(format!(
                "rho {rho}: solver {value:.6} vs published {caption} (delta {:+.4})",
                value - caption
            ));
        }
    }
    if !failures.is_empty() {
        println!(
            "ACCEPTANCE 1c FAIL (expected; defect in the published values): {}",
            failures.join("; ")
        );
        panic!(
            "published semi-unbalanced values unattainable: {}; certified optima are \
             {SEMI_CERTIFIED_RHO1} and {SEMI_CERTIFIED_RHO10}; the published dual expression \
             has a sign defect (no stationary point at rho = eps) and its plug-in value \
             violates the rho-monotonicity the balanced limit requires",
            failures.join("; ")
        );
    }
    println!("ACCEPTANCE 1c PASS: published semi-unbalanced values reproduced");
}

#[test]
fn criterion_2_limit_consistency_and_monotonicity() {
    let (mu, nu) = figure_instance();
    let exact = w2_exact_small(&mu, &nu).unwrap().value;
    let w_small = solve_value(&mu, &nu, 1e-3, None);
    assert!((w_small - exact).abs() <= 0.05, "eps->0 limit: {w_small} vs {exact}");
    let w1 = solve_value(&mu, &nu, 1.0, None);
    let w_rho_inf = solve_value(&mu, &nu, 1.0, Some(1e6));
    assert!((w_rho_inf - w1).abs() <= 1e-3, "rho->inf limit: {w_rho_inf} vs {w1}");

    let mut rng = seeded_rng(2024);
    for trial in 0..50 {
        let n = rng.random_range(2..=20);
        let m = rng.random_range(2..=20);
        let a = DiscreteMeasure::uniform(
            (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
        )
        .unwrap();
        let b = DiscreteMeasure::uniform(
            (0..m).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
        )
        .unwrap();
        let lo = solve_value(&a, &b, 0.05, None);
        let hi = solve_value(&a, &b, 0.5, None);
        assert!(lo <= hi + 1e-9, "trial {trial}: eps-monotonicity violated ({lo} > {hi})");
        let s_lo = solve_value(&a, &b, 0.5, Some(0.3));
        let s_hi = solve_value(&a, &b, 0.5, Some(3.0));
        assert!(
            s_lo <= s_hi + 1e-9 && s_hi <= hi + 1e-9,
            "trial {trial}: rho-monotonicity violated ({s_lo}, {s_hi}, {hi})"
        );
    }
    println!("ACCEPTANCE 2 PASS: eps/rho limits and monotonicity on 50 random instances");
}

fn texture(side: usize, seed: u64) -> Image {
    let mut rng = seeded_rng(seed);
    let mut img = Image::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            let x = c as f64;
            let y = r as f64;
            let v = 0.5
                + 0.22 * ((0.55 * x + 0.2 * y).sin())
                + 0.18 * ((0.9 * y - 0.3 * x).cos())
                + 0.04 * (rng.random::<f64>() - 0.5);
            img.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    img
}

fn probe_image(side: usize, seed: u64) -> Image {
    let mut rng = seeded_rng(seed);
    Image::new(side, side, (0..side * side).map(|_| rng.random()).collect()).unwrap()
}

fn fd_check(
    name: &str,
    value: &dyn Fn(&Image) -> f64,
    grad: &Image,
    image: &Image,
    h: f64,
    tol: f64,
) {
    let mut worst: f64 = 0.0;
    let mut worst_idx = 0;
    for idx in 0..image.len() {
        let mut plus = image.clone();
        plus.data_mut()[idx] += h;
        let mut minus = image.clone();
        minus.data_mut()[idx] -= h;
        let fd = (value(&plus) - value(&minus)) / (2.0 * h);
        let g = grad.data()[idx];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
            worst_idx = idx;
        }
    }
    assert!(worst <= tol, "{name}: worst fd rel error {worst:.3e} at pixel {worst_idx}");
}

#[test]
fn criterion_3_gradient_suite() {
    let start = Instant::now();
    let probe = probe_image(12, 77);
    let cfg = PatchConfig::new(3, 1);
    let reference = patch_measure(&[texture(16, 5)], &cfg).unwrap().subsampled(40, 1);

    // EPLL
    {
        let patches = extract_patches(&texture(16, 6), &cfg).unwrap();
        let fit = em_fit_points(
            patches.vectors(),
            &EmConfig { k: 3, max_iters: 20, tol: 1e-8, cov_floor: 1e-6, seed: 2 },
        )
        .unwrap();
        let g = epll_grad(&fit.model, &probe, &cfg).unwrap();
        fd_check(
            "epll",
            &|img| epll_value(&fit.model, img, &cfg).unwrap(),
            &g,
            &probe,
            1e-5,
            1e-3,
        );
    }
    // patchNR
    {
        let spec = FlowSpec::new(9, 2, vec![12], 2.0).unwrap();
        let model = FlowModel::init(spec, 3);
        let g = patchnr_grad(&model, &probe, &cfg).unwrap();
        fd_check(
            "patchnr",
            &|img| patchnr_value(&model, img, &cfg).unwrap(),
            &g,
            &probe,
            1e-5,
            1e-3,
        );
    }
    // ALR
    {
        let disc = Discriminator::init(9, vec![12], 4);
        let g = alr_grad(&disc, &probe, &cfg).unwrap();
        fd_check("alr", &|img| alr_value(&disc, img, &cfg).unwrap(), &g, &probe, 1e-5, 1e-3);
    }
    // WPP off ties (exact LP value as the finite-difference oracle)
    {
        let prior = WppPrior::new(reference.clone(), cfg.clone(), WppSolver::Exact);
        let g = prior.grad(&probe).unwrap();
        fd_check("wpp", &|img| prior.value(img).unwrap(), &g, &probe, 1e-5, 1e-3);
    }
    // Sinkhorn and semi-unbalanced Sinkhorn
    for rho in [None, Some(0.5)] {
        let sink = SinkhornConfig { epsilon: 0.15, rho, max_iter: 50_000, tol: 1e-9 };
        let prior = SinkhornPrior::new(reference.clone(), cfg.clone(), sink);
        let g = prior.grad(&probe).unwrap();
        let name = if rho.is_some() { "wpp_eps_rho" } else { "wpp_eps" };
        fd_check(name, &|img| prior.value(img).unwrap(), &g, &probe, 1e-5, 1e-3);
    }
    // Gaussian data term through the super-resolution operator
    {
        let op = SuperResModel::new(1.0, 2, 12, 12).unwrap();
        let y = op.apply(&texture(12, 8).map(|v| v * 0.9)).unwrap();
        let term = DataTerm::GaussianL2 { sigma: 0.1 };
        let g = data_grad(&term, &op, &probe, &y).unwrap();
        fd_check(
            "gaussian_data",
            &|img| data_value(&term, &op, img, &y).unwrap(),
            &g,
            &probe,
            1e-5,
            1e-3,
        );
    }
    // Poisson data term through the Radon operator
    {
        let op = RadonModel::new(12, 8, 17).unwrap();
        let y = op.radon(&texture(12, 9)).unwrap().map(|v| v * 1.02);
        let term = DataTerm::PoissonCt { n0: 4096.0, mu_norm: 81.35858 };
        let g = data_grad(&term, &op, &probe, &y).unwrap();
        fd_check(
            "poisson_data",
            &|img| data_value(&term, &op, img, &y).unwrap(),
            &g,
            &probe,
            3e-4,
            1e-3,
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "gradient suite took {elapsed:?}");
    println!("ACCEPTANCE 3 PASS: all eight gradient checks within 1e-3 in {elapsed:?}");
}

#[test]
fn criterion_4_bayes_oracles() {
    // grid-integration Bayes on the bimodal example
    let prior = GmmModel::new(
        vec![0.5, 0.5],
        vec![
            GmmComponent::new(Array1::from(vec![-1.0]), Array2::from_elem((1, 1), BIMODAL_EPS2))
                .unwrap(),
            GmmComponent::new(Array1::from(vec![1.0]), Array2::from_elem((1, 1), BIMODAL_EPS2))
                .unwrap(),
        ],
    )
    .unwrap();
    let sigma = BIMODAL_SIGMA2.sqrt();
    let xs: Vec<f64> = (0..4001).map(|i| -2.0 + 4.0 * i as f64 / 4000.0).collect();
    for y in [-0.05, -0.01, 0.01, 0.05] {
        let post = gmm_posterior(&prior, &Array2::eye(1), sigma, &[y]).unwrap();
        // normalized grid posterior
        let mut grid: Vec<f64> = xs
            .iter()
            .map(|&x| {
                (-(y - x) * (y - x) / (2.0 * sigma * sigma)).exp()
                    * prior.logpdf(&[x]).unwrap().exp()
            })
            .collect();
        let h = xs[1] - xs[0];
        let z: f64 = grid.iter().sum::<f64>() * h;
        for v in &mut grid {
            *v /= z;
        }
        let mut linf: f64 = 0.0;
        for (&x, &g) in xs.iter().zip(&grid) {
            linf = linf.max((post.logpdf(&[x]).unwrap().exp() - g).abs());
        }
        assert!(linf <= 1e-6, "y={y}: grid Bayes Linf {linf:.2e}");
    }
    let at_zero = bimodal_1d_reference(0.0);
    assert!(at_zero.mmse.abs() < 1e-12, "MMSE(0) = {}", at_zero.mmse);
    let plus = bimodal_1d_reference(0.01);
    let minus = bimodal_1d_reference(-0.01);
    assert!(
        plus.map > 0.9 && minus.map < -0.9,
        "MAP discontinuity: map(+0.01)={} map(-0.01)={}",
        plus.map,
        minus.map
    );
    // cross-check MMSE against the K=1 conjugate estimator path
    let est = mmse_gaussian(&[0.0], &Array2::eye(1), &Array2::eye(1), 1.0, &[0.5]).unwrap();
    assert!((est[0] - 0.25).abs() < 1e-12);
    println!("ACCEPTANCE 4 PASS: posterior grid Bayes <= 1e-6, MMSE(0) = 0, MAP sign flips at 0");
}

#[test]
fn criterion_5_em_properties() {
    let mut rng = seeded_rng(31);
    for trial in 0..20 {
        let n = rng.random_range(40..120);
        let d = rng.random_range(1..4);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 3.0).collect())
            .collect();
        let cfg = EmConfig { k: 3.min(n), max_iters: 30, tol: 0.0, cov_floor: 1e-8, seed: trial };
        let fit = em_fit_points(&points, &cfg).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trial {trial}: loglik decreased {} -> {}", w[0], w[1]);
        }
    }
    // K=1 closed form
    let points: Vec<Vec<f64>> = (0..50)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let fit = em_fit_points(
        &points,
        &EmConfig { k: 1, max_iters: 1, tol: 0.0, cov_floor: 1e-9, seed: 0 },
    )
    .unwrap();
    let mean0: f64 = points.iter().map(|p| p[0]).sum::<f64>() / 50.0;
    assert!((fit.model.components()[0].mean[0] - mean0).abs() < 1e-12);
    // two-cluster recovery
    let mut points = Vec::new();
    for _ in 0..100 {
        points.push(vec![-5.0 + rng.random::<f64>() * 2.0 - 1.0]);
        points.push(vec![5.0 + rng.random::<f64>() * 2.0 - 1.0]);
    }
    let fit = em_fit_points(
        &points,
        &EmConfig { k: 2, max_iters: 100, tol: 1e-10, cov_floor: 1e-9, seed: 7 },
    )
    .unwrap();
    let mut means: Vec<f64> = fit.model.components().iter().map(|c| c.mean[0]).collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((means[0] + 5.0).abs() < 0.3 && (means[1] - 5.0).abs() < 0.3);
    for w in fit.model.weights() {
        assert!((w - 0.5).abs() < 0.1);
    }
    println!("ACCEPTANCE 5 PASS: EM monotone on 20 datasets, K=1 closed form, clusters recovered");
}

#[test]
fn criterion_6_flow_properties() {
    // bijectivity at dim 36
    let spec = FlowSpec::new(36, 3, vec![24], 2.0).unwrap();
    let model = FlowModel::init(spec, 11);
    let mut rng = seeded_rng(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..36).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let (z, _) = model.inverse(&x).unwrap();
        let back = model.forward(&z).unwrap();
        for (a, b) in back.iter().zip(&x) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-8, "inverse-forward identity sup error {worst:.2e}");

    // logdet vs finite-difference Jacobian in dim 4
    let spec = FlowSpec::new(4, 2, vec![8], 2.0).unwrap();
    let small = FlowModel::init(spec, 13);
    let x = vec![0.3, -0.4, 0.8, 0.1];
    let (_, logdet) = small.inverse(&x).unwrap();
    let h = 1e-6;
    let mut jac = [[0.0f64; 4]; 4];
    for j in 0..4 {
        let mut xp = x.clone();
        xp[j] += h;
        let (zp, _) = small.inverse(&xp).unwrap();
        let mut xm = x.clone();
        xm[j] -= h;
        let (zm, _) = small.inverse(&xm).unwrap();
        for i in 0..4 {
            jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    let det = det4(&jac);
    let rel = (logdet - det.abs().ln()).abs() / det.abs().ln().abs().max(1e-3);
    assert!(rel <= 1e-4, "logdet {logdet} vs fd {}", det.abs().ln());

    // dim-2 training reaches the standard-normal entropy
    let mut rng = seeded_rng(14);
    let data: Vec<Vec<f64>> = (0..4096)
        .map(|_| {
            (0..2)
                .map(|_| {
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        })
        .collect();
    let spec = FlowSpec::new(2, 2, vec![16], 2.0).unwrap();
    let cfg = FlowTrainConfig {
        steps: 2000,
        batch_size: 128,
        adam: AdamParams::with_lr(2e-3),
        seed: 15,
    };
    let result = train_flow(&data, spec, &cfg).unwrap();
    assert!(result.aborted_at.is_none());
    const LN_2PI: f64 = 1.837877066409345483560659472811;
    let entropy = 1.0 + LN_2PI; // differential entropy of N(0, I_2)
    let nll = result.final_loss + LN_2PI; // add back (d/2) log 2 pi
    assert!(
        (nll - entropy).abs() <= 0.1,
        "dim-2 NLL {nll} not within 0.1 nats of entropy {entropy}"
    );

    // change-of-variables normalization by grid quadrature over a box
    let trained = &result.model;
    let grid = 1000;
    let lo = -5.0;
    let hi = 5.0;
    let cell = (hi - lo) / grid as f64;
    let mut mass = 0.0;
    for i in 0..grid {
        for j in 0..grid {
            let x = [lo + (i as f64 + 0.5) * cell, lo + (j as f64 + 0.5) * cell];
            mass += trained.log_density(&x).unwrap().exp() * cell * cell;
        }
    }
    assert!(
        (0.9..=1.1).contains(&mass),
        "pushforward density mass over the box: {mass}"
    );
    println!(
        "ACCEPTANCE 6 PASS: bijectivity {worst:.1e}, logdet fd rel {rel:.1e}, dim-2 NLL {nll:.4} (entropy {entropy:.4}), grid mass {mass:.4}"
    );
}

fn det4(jac: &[[f64; 4]; 4]) -> f64 {
    fn det3(m: &[[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
    let mut det = 0.0;
    for col in 0..4 {
        let mut minor = [[0.0f64; 3]; 3];
        for r in 1..4 {
            let mut cc = 0;
            for c in 0..4 {
                if c == col {
                    continue;
                }
                minor[r - 1][cc] = jac[r][c];
                cc += 1;
            }
        }
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * jac[0][col] * det3(&minor);
    }
    det
}

#[test]
fn criterion_7_forward_models() {
    // adjoint dot tests
    let dot = |op: &dyn LinearOperator, seed: u64| -> f64 {
        let (iw, ih) = op.input_shape();
        let (ow, oh) = op.output_shape();
        let x = probe_image_rect(iw, ih, seed);
        let y = probe_image_rect(ow, oh, seed + 1);
        let fx = op.apply(&x).unwrap();
        let fty = op.adjoint(&y).unwrap();
        let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(fty.data()).map(|(a, b)| a * b).sum();
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-30)
    };
    let sr = SuperResModel::new(2.0, 4, 32, 32).unwrap();
    assert!(dot(&sr, 41) <= 1e-10);
    let mut mask = Image::zeros(16, 16);
    for i in (0..256).step_by(2) {
        mask.data_mut()[i] = 1.0;
    }
    let ip = InpaintModel::new(mask).unwrap();
    assert!(dot(&ip, 42) <= 1e-10);
    let rd = RadonModel::new(24, 12, 35).unwrap();
    assert!(dot(&rd, 43) <= 1e-10);

    // disk chord check
    let mut model = RadonModel::new(128, 8, 160).unwrap();
    model.pixel_size = 1.0;
    let r = 40.0;
    let half = 127.0 / 2.0;
    let mut disk = Image::zeros(128, 128);
    for row in 0..128 {
        for col in 0..128 {
            let u = col as f64 - half;
            let v = row as f64 - half;
            if (u * u + v * v).sqrt() <= r {
                disk.set(row, col, 1.0);
            }
        }
    }
    let sino = model.radon(&disk).unwrap();
    let mut max_rel: f64 = 0.0;
    for a in 0..model.n_angles {
        for d in 0..model.n_detectors {
            let s = (d as f64 - (model.n_detectors as f64 - 1.0) / 2.0) * model.det_spacing;
            if s.abs() < 0.9 * r {
                let chord = 2.0 * (r * r - s * s).sqrt();
                max_rel = max_rel.max((sino.get(a, d) - chord).abs() / chord);
            }
        }
    }
    assert!(max_rel <= 0.03, "disk chord relative error {max_rel}");

    // FBP self-consistency at 128^2 with 180 angles
    let phantom = ellipse_phantom(128);
    let model = RadonModel::new(128, 180, 183).unwrap();
    let recon = model.fbp(&model.radon(&phantom).unwrap()).unwrap();
    let db = psnr(&phantom, &recon, 1.0).unwrap();
    assert!(db >= 25.0, "FBP self-consistency {db} dB < 25 dB");
    println!(
        "ACCEPTANCE 7 PASS: adjoints <= 1e-10, disk chord {max_rel:.4}, FBP {db:.2} dB"
    );
}

fn probe_image_rect(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = seeded_rng(seed);
    Image::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap()
}

fn fit_epll_on(image: &Image, cfg: &PatchConfig, k: usize, seed: u64) -> GmmModel {
    let patches = extract_patches(image, cfg).unwrap();
    em_fit_points(
        patches.vectors(),
        &EmConfig { k, max_iters: 40, tol: 1e-7, cov_floor: 0.0, seed },
    )
    .unwrap()
    .model
}

#[test]
fn criterion_8a_sr_epll_beats_bicubic() {
    let start = Instant::now();
    // reference texture for training; held-out crop for reconstruction
    let big = texture(120, 101);
    let mut train = Image::zeros(64, 64);
    for r in 0..64 {
        for c in 0..64 {
            train.set(r, c, big.get(r, c));
        }
    }
    let mut truth = Image::zeros(48, 48);
    for r in 0..48 {
        for c in 0..48 {
            truth.set(r, c, big.get(r + 70, c + 70));
        }
    }
    let patch = PatchConfig::new(6, 1);
    let train_cfg = PatchConfig::new(6, 2);
    let model = fit_epll_on(&train, &train_cfg, 8, 5);

    let op = SuperResModel::new(1.0, 2, 48, 48).unwrap();
    let y = patchprior::forward::simulate_observation(
        &op,
        &truth,
        &patchprior::forward::NoiseSpec::Gaussian { sigma: 0.01 },
        33,
    )
    .unwrap();
    let bicubic = bicubic_upsample(&y, 2);
    let bicubic_db = psnr(&truth, &bicubic, 1.0).unwrap();

    let problem = ReconProblem {
        forward: ForwardOp::SuperRes(op),
        data_term: DataTerm::GaussianL2 { sigma: 0.01 },
        regularizer: Box::new(EpllPrior::new(model, patch)),
        weight: 2e-4, // alpha = sigma^2 * beta
    };
    let cfg = MapConfig {
        iterations: 300,
        adam: AdamParams::with_lr(0.01),
        init: InitScheme::NaiveInversion,
        seed: 1,
        skip_gradient_check: false,
    };
    let result = map_reconstruct(&problem, &y, &cfg).unwrap();
    assert!(result.aborted_at.is_none());
    let map_db = psnr(&truth, &result.image, 1.0).unwrap();
    assert!(
        map_db >= bicubic_db + 1.0,
        "EPLL SR {map_db:.2} dB vs bicubic {bicubic_db:.2} dB (need +1 dB)"
    );
    // soft monotonicity of the objective over trailing windows
    let trace = &result.objective_trace;
    let tail = &trace[trace.len().saturating_sub(100)..];
    let head_mean: f64 = trace[..100].iter().sum::<f64>() / 100.0;
    let tail_mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(tail_mean <= head_mean, "objective did not descend on average");
    println!(
        "ACCEPTANCE 8a PASS: EPLL SR {map_db:.2} dB vs bicubic {bicubic_db:.2} dB in {:?}",
        start.elapsed()
    );
}

fn hole_mask(side: usize, lo: usize, hi: usize) -> Image {
    let mut mask = Image::constant(side, side, 1.0);
    for r in lo..hi {
        for c in lo..hi {
            mask.set(r, c, 0.0);
        }
    }
    mask
}

#[test]
fn criterion_8b_inpainting_constraint_bit_exact() {
    let side = 24;
    let truth = texture(side, 55);
    let mask = hole_mask(side, 8, 16);
    let model = InpaintModel::new(mask.clone()).unwrap();
    let y = LinearOperator::apply(&model, &truth).unwrap();

    // prior fit on the observed region's patches
    let patch = PatchConfig::new(4, 1);
    let all = extract_patches(&y, &patch).unwrap();
    let observed: Vec<Vec<f64>> = all
        .vectors()
        .iter()
        .zip(all.origins())
        .filter(|(_, &(r0, c0))| {
            (0..4).all(|dr| (0..4).all(|dc| mask.get(r0 + dr, c0 + dc) == 1.0))
        })
        .map(|(v, _)| v.clone())
        .collect();
    let fit = em_fit_points(
        &observed,
        &EmConfig { k: 3, max_iters: 30, tol: 1e-7, cov_floor: 0.0, seed: 3 },
    )
    .unwrap();

    let problem = ReconProblem {
        forward: ForwardOp::Inpaint(model),
        data_term: DataTerm::Equality,
        regularizer: Box::new(EpllPrior::new(fit.model, patch)),
        weight: 1.0,
    };
    let cfg = MapConfig {
        iterations: 200,
        adam: AdamParams::with_lr(0.02),
        init: InitScheme::NaiveInversion,
        seed: 4,
        skip_gradient_check: false,
    };
    let out = inpaint_map(&problem, &y, &cfg).unwrap();
    let mut changed_inside = 0;
    for idx in 0..side * side {
        if mask.data()[idx] == 1.0 {
            assert_eq!(
                out.image.data()[idx].to_bits(),
                y.data()[idx].to_bits(),
                "observed pixel {idx} not bit-exact"
            );
        } else if out.image.data()[idx] != y.data()[idx] {
            changed_inside += 1;
        }
    }
    assert!(changed_inside > 0, "hole was never updated");
    println!("ACCEPTANCE 8b PASS: observed pixels bit-exact, {changed_inside} hole pixels filled");
}

/// Quadratic prior ½‖x − m‖² with an analytic Gaussian posterior.
struct QuadraticPrior {
    center: Vec<f64>,
}

impl Regularizer for QuadraticPrior {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn patch_dim(&self) -> usize {
        1
    }
    fn value(&self, image: &Image) -> Result<f64> {
        Ok(0.5
            * image
                .data()
                .iter()
                .zip(&self.center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
    }
    fn grad(&self, image: &Image) -> Result<Image> {
        Image::new(
            image.width(),
            image.height(),
            image.data().iter().zip(&self.center).map(|(a, b)| a - b).collect(),
        )
    }
    fn probe_instance(&self) -> Box<dyn Regularizer> {
        Box::new(QuadraticPrior { center: vec![0.1; 100] })
    }
}

#[test]
fn criterion_8c_ula_matches_analytic_gaussian() {
    let start = Instant::now();
    let side = 2;
    let sigma = 1.0;
    let alpha = 1.0;
    let y = probe_image_rect(side, side, 61);
    let center = vec![0.3; side * side];
    let problem = ReconProblem {
        forward: ForwardOp::Identity(IdentityOp { width: side, height: side }),
        data_term: DataTerm::GaussianL2 { sigma },
        regularizer: Box::new(QuadraticPrior { center: center.clone() }),
        weight: alpha,
    };
    let cfg = UlaConfig {
        step: 1e-2,
        burn_in: 10_000,
        n_samples: 190_000,
        thinning: 1,
        clip: false,
        seed: 17,
        init: InitScheme::Zero,
    };
    let result = ula_sample(&problem, &y, &cfg).unwrap();
    let (mean, std) = posterior_stats(&result.samples).unwrap();
    let post_var = sigma * sigma / (1.0 + alpha);
    for ((m, s), (yv, c)) in mean.data().iter().zip(std.data()).zip(y.data().iter().zip(&center)) {
        let expect = (yv + alpha * c) / (1.0 + alpha);
        assert!((m - expect).abs() <= 0.05, "chain mean {m} vs {expect}");
        let rel = (s * s - post_var).abs() / post_var;
        assert!(rel <= 0.10, "chain variance {} vs {post_var} (rel {rel})", s * s);
    }
    println!(
        "ACCEPTANCE 8c PASS: ULA mean within 0.05 and variance within 10% of the analytic posterior in {:?}",
        start.elapsed()
    );
}

#[test]
fn criterion_8d_ula_inpainting_uncertainty_localized() {
    let side = 20;
    let truth = texture(side, 71);
    let mask = hole_mask(side, 7, 13);
    let model = InpaintModel::new(mask.clone()).unwrap();
    let y = LinearOperator::apply(&model, &truth).unwrap();

    let patch = PatchConfig::new(3, 1);
    let all = extract_patches(&y, &patch).unwrap();
    let observed: Vec<Vec<f64>> = all
        .vectors()
        .iter()
        .zip(all.origins())
        .filter(|(_, &(r0, c0))| {
            (0..3).all(|dr| (0..3).all(|dc| mask.get(r0 + dr, c0 + dc) == 1.0))
        })
        .map(|(v, _)| v.clone())
        .collect();
    let fit = em_fit_points(
        &observed,
        &EmConfig { k: 2, max_iters: 25, tol: 1e-7, cov_floor: 0.0, seed: 5 },
    )
    .unwrap();
    let problem = ReconProblem {
        forward: ForwardOp::Inpaint(model),
        data_term: DataTerm::Equality,
        regularizer: Box::new(EpllPrior::new(fit.model, patch)),
        weight: 1.0,
    };
    let cfg = UlaConfig {
        step: 2e-5,
        burn_in: 500,
        n_samples: 64,
        thinning: 20,
        clip: true,
        seed: 23,
        init: InitScheme::NaiveInversion,
    };
    let result = ula_sample(&problem, &y, &cfg).unwrap();
    assert!(result.aborted_at.is_none());
    let (_, std) = posterior_stats(&result.samples).unwrap();
    let mut inside = Vec::new();
    for idx in 0..side * side {
        if mask.data()[idx] == 1.0 {
            assert_eq!(std.data()[idx], 0.0, "std not zero at observed pixel {idx}");
        } else {
            inside.push(std.data()[idx]);
        }
    }
    let mean_inside: f64 = inside.iter().sum::<f64>() / inside.len() as f64;
    assert!(mean_inside > 1e-3, "mean hole std {mean_inside} too small");
    assert!(inside.iter().all(|&s| s > 0.0), "hole std must be strictly positive");
    println!(
        "ACCEPTANCE 8d PASS: std exactly 0 on observed pixels, mean {mean_inside:.4} inside the hole"
    );
}

#[test]
fn criterion_9_reproducibility() {
    // full prior-fit + reconstruction pipeline twice with the same seed,
    // including a stochastic patch subset; outputs must agree bitwise
    let run = || -> Vec<u64> {
        let train = texture(40, 91);
        let truth = texture(32, 92);
        let mut patch = PatchConfig::new(4, 1);
        patch.subset = Some(400);
        patch.seed = 9;
        let model = fit_epll_on(&train, &PatchConfig::new(4, 2), 4, 6);
        let op = SuperResModel::new(1.0, 2, 32, 32).unwrap();
        let y = patchprior::forward::simulate_observation(
            &op,
            &truth,
            &patchprior::forward::NoiseSpec::Gaussian { sigma: 0.01 },
            44,
        )
        .unwrap();
        let problem = ReconProblem {
            forward: ForwardOp::SuperRes(op),
            data_term: DataTerm::GaussianL2 { sigma: 0.01 },
            regularizer: Box::new(EpllPrior::new(model, patch)),
            weight: 1e-4,
        };
        let cfg = MapConfig {
            iterations: 40,
            adam: AdamParams::with_lr(0.01),
            init: InitScheme::NaiveInversion,
            seed: 2,
            skip_gradient_check: true,
        };
        let result = map_reconstruct(&problem, &y, &cfg).unwrap();
        result.image.data().iter().map(|v| v.to_bits()).collect()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b, "reconstruction outputs differ bitwise across identical runs");
    println!("ACCEPTANCE 9 PASS: identical config+seed gives byte-identical outputs");
}
