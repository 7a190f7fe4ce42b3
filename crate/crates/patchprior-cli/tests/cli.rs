//! End-to-end tests of the command-line interface: file formats, exit codes,
//! determinism, and the documented subcommand behaviors.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchprior::checkpoint::{load_checkpoint, CheckpointPayload};
use patchprior::image::Image;
use patchprior::io::{load_raw, save_pgm};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchprior"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn patchprior")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pp_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn texture(side: usize, seed: u64) -> Image {
    use rand::Rng;
    let mut rng = patchprior::math::seeded_rng(seed);
    let mut img = Image::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            let v = 0.5
                + 0.25 * ((r as f64) * 0.6).sin() * ((c as f64) * 0.4).cos()
                + 0.08 * (rng.random::<f64>() - 0.5);
            img.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    img
}

fn figure_csvs(dir: &Path) -> (PathBuf, PathBuf) {
    let mu = dir.join("mu.csv");
    let nu = dir.join("nu.csv");
    let muw = [2.0, 3.0, 4.0, 5.0];
    let nuw = [3.0, 5.0, 7.0, 9.0, 11.0];
    let mut s = String::new();
    for (i, w) in muw.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, w / 14.0));
    }
    std::fs::write(&mu, s).unwrap();
    let mut s = String::new();
    for (i, w) in nuw.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, w / 35.0));
    }
    std::fs::write(&nu, s).unwrap();
    (mu, nu)
}

#[test]
fn ot_subcommand_reproduces_captioned_values() {
    let dir = tmp_dir("ot");
    let (mu, nu) = figure_csvs(&dir);
    // exact LP
    let out_path = dir.join("exact.json");
    let out = run(&[
        "ot",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--plan",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert!((report["value"].as_f64().unwrap() - 0.714).abs() < 2e-3);
    assert!(report["plan_path"].as_str().is_some());

    // entropic at epsilon = 1 (caption value 1.544)
    let out_path = dir.join("sinkhorn.json");
    let out = run(&[
        "ot",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--tol",
        "1e-12",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert!((report["value"].as_f64().unwrap() - 1.544).abs() < 2e-3);
    assert_eq!(report["converged"], serde_json::json!(true));

    // semi-unbalanced at rho = 1 (certified optimum of the relaxed problem)
    let out_path = dir.join("semi.json");
    let out = run(&[
        "ot",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--rho",
        "1.0",
        "--tol",
        "1e-12",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert!((report["value"].as_f64().unwrap() - 1.254082).abs() < 2e-3);

    // --rho without --epsilon is a usage error
    let out = run(&[
        "ot",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--rho",
        "1.0",
        "--out",
        dir.join("bad.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_prior_name_exits_2_and_missing_file_exits_4() {
    let dir = tmp_dir("exitcodes");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "sr",
            "prior": "not_a_prior",
            "forward": {"kind": "sr", "width": 16, "height": 16, "factor": 2, "blur_sigma": 1.0}
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&[
        "fit-prior",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "fit-prior",
        "--config",
        dir.join("nonexistent.json").to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

fn write_mask(dir: &Path, side: usize, hole: std::ops::Range<usize>) -> PathBuf {
    let mut mask = Image::constant(side, side, 1.0);
    for r in hole.clone() {
        for c in hole.clone() {
            mask.set(r, c, 0.0);
        }
    }
    let path = dir.join("mask.pgm");
    save_pgm(&mask, &path, 8).unwrap();
    path
}

#[test]
fn simulate_inpainting_is_exact_mask_product_and_seed_deterministic() {
    let dir = tmp_dir("sim_inpaint");
    let side = 20;
    let truth = texture(side, 3);
    let truth_path = dir.join("truth.pgm");
    save_pgm(&truth, &truth_path, 16).unwrap();
    let mask_path = write_mask(&dir, side, 6..13);

    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "inpaint",
            "prior": "epll",
            "forward": {"kind": "inpaint", "mask": mask_path},
            "ground_truth": truth_path,
            "seed": 11
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (_, obs) = load_raw(out_dir.join("observation.raw")).unwrap();
    let (_, gt) = load_raw(out_dir.join("ground_truth.raw")).unwrap();
    let mask = patchprior::io::load_pgm(&mask_path).unwrap();
    for i in 0..side * side {
        assert_eq!(obs.data()[i], gt.data()[i] * mask.data()[i]);
    }

    // identical bytes on a rerun with the same seed
    let out_dir2 = dir.join("out2");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let a = std::fs::read(out_dir.join("observation.raw")).unwrap();
    let b = std::fs::read(out_dir2.join("observation.raw")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_ct_poisson_perturbation_in_sanity_band() {
    let dir = tmp_dir("sim_ct");
    let truth = patchprior::forward::ellipse_phantom(64);
    let truth_path = dir.join("truth.raw");
    patchprior::io::save_raw(&truth, patchprior::io::RawKind::Image, &truth_path).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "ct",
            "prior": "epll",
            "forward": {"kind": "ct", "image_size": 64, "n_angles": 30, "n_detectors": 91},
            "ground_truth": truth_path,
            "seed": 5
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (side, obs) = load_raw(out_dir.join("observation.raw")).unwrap();
    assert_eq!(side.kind, patchprior::io::RawKind::Sinogram);

    let model = patchprior::forward::RadonModel::new(64, 30, 91).unwrap();
    let clean = model.radon(&truth).unwrap();
    let mean_clean: f64 = clean.data().iter().sum::<f64>() / clean.len() as f64;
    let mean_abs_dev: f64 = clean
        .data()
        .iter()
        .zip(obs.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / clean.len() as f64;
    let rel = mean_abs_dev / mean_clean;
    assert!(
        (0.001..=0.10).contains(&rel),
        "mean relative sinogram perturbation {rel} outside [0.1%, 10%]"
    );
}

#[test]
fn fit_prior_epll_checkpoint_round_trips_loglik() {
    let dir = tmp_dir("fit_epll");
    let tex = texture(64, 7);
    let ref_path = dir.join("ref.pgm");
    save_pgm(&tex, &ref_path, 16).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "sr",
            "prior": "epll",
            "forward": {"kind": "sr", "width": 64, "height": 64, "factor": 2, "blur_sigma": 1.0},
            "patch": {"patch_size": 6, "stride": 2, "subset": null, "seed": 0},
            "prior_params": {"k": 5, "em_max_iters": 25},
            "reference_images": [ref_path],
            "seed": 3
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "fit-prior",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = load_checkpoint(out_dir.join("prior.ckpt")).unwrap();
    let stored = ckpt.extra["loglik"].as_f64().unwrap();
    let CheckpointPayload::Gmm(model) = ckpt.payload else { panic!("expected gmm") };
    assert_eq!(model.k(), 5);
    // recompute the log-likelihood of the reference patches
    let loaded = patchprior::io::load_pgm(&ref_path).unwrap();
    let patches = patchprior::image::extract_patches(&loaded, &ckpt.patch).unwrap();
    let mut loglik = 0.0;
    for v in patches.vectors() {
        loglik += model.logpdf(v).unwrap();
    }
    let rel = (loglik - stored).abs() / stored.abs();
    assert!(rel < 1e-10, "checkpoint loglik drift {rel}");
}

#[test]
fn fit_prior_wpp_checkpoint_is_reference_measure() {
    let dir = tmp_dir("fit_wpp");
    let tex = texture(20, 9);
    let ref_path = dir.join("ref.pgm");
    save_pgm(&tex, &ref_path, 16).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "sr",
            "prior": "wpp",
            "forward": {"kind": "sr", "width": 20, "height": 20, "factor": 2, "blur_sigma": 1.0},
            "patch": {"patch_size": 4, "stride": 2, "subset": null, "seed": 0},
            "reference_images": [ref_path],
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "fit-prior",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = load_checkpoint(out_dir.join("prior.ckpt")).unwrap();
    let CheckpointPayload::Measure(measure) = ckpt.payload else { panic!("expected measure") };
    // (20-4)/2+1 = 9 positions per axis
    assert_eq!(measure.len(), 81);
    assert_eq!(measure.dim(), 16);
}

#[test]
fn reconstruct_weight_zero_ignores_the_prior() {
    let dir = tmp_dir("recon_w0");
    let truth = texture(24, 13);
    let truth_path = dir.join("truth.raw");
    patchprior::io::save_raw(&truth, patchprior::io::RawKind::Image, &truth_path).unwrap();

    let make_cfg = |prior: &str, out: &str| {
        let cfg = dir.join(format!("cfg_{prior}.json"));
        std::fs::write(
            &cfg,
            serde_json::json!({
                "task": "sr",
                "prior": prior,
                "forward": {"kind": "sr", "width": 24, "height": 24, "factor": 2, "blur_sigma": 1.0},
                "patch": {"patch_size": 4, "stride": 1, "subset": null, "seed": 0},
                "prior_params": {"k": 2, "em_max_iters": 5, "epsilon": 0.1},
                "solver": {"iterations": 120, "lr": 0.02, "weight": 0.0},
                "reference_images": [dir.join("ref.pgm")],
                "ground_truth": truth_path,
                "observation": dir.join("obs").join("observation.raw"),
                "checkpoint": dir.join(format!("fit_{prior}")).join("prior.ckpt"),
                "seed": 1
            })
            .to_string(),
        )
        .unwrap();
        (cfg, dir.join(out))
    };

    let ref_img = texture(24, 14);
    save_pgm(&ref_img, &dir.join("ref.pgm"), 16).unwrap();

    // simulate once
    let (cfg_epll, _) = make_cfg("epll", "r_epll");
    let out = run(&["simulate", "--config", cfg_epll.to_str().unwrap(), "--out", dir.join("obs").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for prior in ["epll", "wpp"] {
        let (cfg, _) = make_cfg(prior, "unused");
        let fit_dir = dir.join(format!("fit_{prior}"));
        let out = run(&["fit-prior", "--config", cfg.to_str().unwrap(), "--out", fit_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let (cfg, rdir) = make_cfg(prior, &format!("r_{prior}"));
        let out = run(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", rdir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // with weight 0 the prior must not matter: byte-identical primary outputs
    let a = std::fs::read(dir.join("r_epll").join("reconstruction.raw")).unwrap();
    let b = std::fs::read(dir.join("r_wpp").join("reconstruction.raw")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metrics_emits_csv_rows() {
    let dir = tmp_dir("metrics");
    let a = texture(16, 21);
    let b = texture(16, 22);
    save_pgm(&a, &dir.join("a.pgm"), 16).unwrap();
    save_pgm(&b, &dir.join("b.pgm"), 16).unwrap();
    let out = run(&[
        "metrics",
        "--reference",
        dir.join("a.pgm").to_str().unwrap(),
        dir.join("a.pgm").to_str().unwrap(),
        dir.join("b.pgm").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "path,psnr,ssim");
    let self_row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(self_row[1], "99"); // capped PSNR for identical images
    let cross_row: Vec<&str> = lines[2].split(',').collect();
    let psnr: f64 = cross_row[1].parse().unwrap();
    assert!(psnr < 99.0);
}

#[test]
fn sample_inpainting_std_localized_and_reproducible() {
    let dir = tmp_dir("sample");
    let side = 16;
    let truth = texture(side, 31);
    let truth_path = dir.join("truth.pgm");
    save_pgm(&truth, &truth_path, 16).unwrap();
    let mask_path = write_mask(&dir, side, 6..10);

    let cfg_path = dir.join("cfg.json");
    std::fs::write(
        &cfg_path,
        serde_json::json!({
            "task": "inpaint",
            "prior": "epll",
            "forward": {"kind": "inpaint", "mask": mask_path},
            "patch": {"patch_size": 3, "stride": 1, "subset": null, "seed": 0},
            "prior_params": {"k": 2, "em_max_iters": 10},
            "solver": {"weight": 1.0, "ula_step": 2e-5, "ula_burn_in": 100,
                        "ula_samples": 24, "ula_thinning": 5},
            "ground_truth": truth_path,
            "observation": dir.join("sim").join("observation.raw"),
            "checkpoint": dir.join("fit").join("prior.ckpt"),
            "seed": 13
        })
        .to_string(),
    )
    .unwrap();

    for (cmd, out) in [("simulate", "sim"), ("fit-prior", "fit"), ("sample", "s1"), ("sample", "s2")] {
        let out = run(&[cmd, "--config", cfg_path.to_str().unwrap(), "--out", dir.join(out).to_str().unwrap()]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let (_, std_img) = load_raw(dir.join("s1").join("std.raw")).unwrap();
    let mask = patchprior::io::load_pgm(&mask_path).unwrap();
    let mut hole_stds = Vec::new();
    for i in 0..side * side {
        if mask.data()[i] == 1.0 {
            assert_eq!(std_img.data()[i], 0.0, "observed pixel {i} has nonzero std");
        } else {
            hole_stds.push(std_img.data()[i]);
        }
    }
    let mean_hole: f64 = hole_stds.iter().sum::<f64>() / hole_stds.len() as f64;
    assert!(mean_hole > 1e-3, "hole std {mean_hole} too small");

    // identical config + seed: byte-identical sample stacks and statistics
    for name in ["sample_000.raw", "mean.raw", "std.raw"] {
        let a = std::fs::read(dir.join("s1").join(name)).unwrap();
        let b = std::fs::read(dir.join("s2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across identical runs");
    }
}

#[test]
fn zero_shot_patchnr_and_sinkhorn_priors_run_end_to_end() {
    let dir = tmp_dir("zeroshot");
    let side = 32;
    let truth = texture(side, 41);
    let truth_path = dir.join("truth.pgm");
    save_pgm(&truth, &truth_path, 16).unwrap();

    let make_cfg = |prior: &str| {
        let cfg = dir.join(format!("{prior}.json"));
        std::fs::write(
            &cfg,
            serde_json::json!({
                "task": "zero-shot-sr",
                "prior": prior,
                "forward": {"kind": "sr", "width": side, "height": side, "factor": 2, "blur_sigma": 1.0},
                "patch": {"patch_size": 3, "stride": 1, "subset": null, "seed": 0},
                "prior_params": {
                    "flow_layers": 2, "flow_hidden": [8], "flow_steps": 150, "flow_batch": 32,
                    "epsilon": 0.1, "sinkhorn_max_iter": 500, "sinkhorn_tol": 1e-7,
                    "max_reference": 128
                },
                "solver": {"iterations": 25, "lr": 0.02, "weight": 1e-4},
                "ground_truth": truth_path,
                "observation": dir.join("sim").join("observation.raw"),
                "checkpoint": dir.join(format!("fit_{prior}")).join("prior.ckpt"),
                "seed": 2
            })
            .to_string(),
        )
        .unwrap();
        cfg
    };

    let cfg = make_cfg("patchnr");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.join("sim").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for prior in ["patchnr", "wpp_eps"] {
        let cfg = make_cfg(prior);
        let fit = dir.join(format!("fit_{prior}"));
        let out = run(&["fit-prior", "--config", cfg.to_str().unwrap(), "--out", fit.to_str().unwrap()]);
        assert!(out.status.success(), "fit {prior}: {}", String::from_utf8_lossy(&out.stderr));
        let rec = dir.join(format!("rec_{prior}"));
        let out = run(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", rec.to_str().unwrap()]);
        assert!(out.status.success(), "reconstruct {prior}: {}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(rec.join("report.json")).unwrap()).unwrap();
        assert!(report["psnr"].as_f64().unwrap() > 10.0, "{prior} reconstruction unusable");
    }
}

#[test]
fn alr_fit_uses_degraded_observation_patches() {
    let dir = tmp_dir("alr_fit");
    let side = 24;
    let truth = texture(side, 51);
    let reference = texture(side, 52);
    save_pgm(&truth, &dir.join("truth.pgm"), 16).unwrap();
    save_pgm(&reference, &dir.join("ref.pgm"), 16).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "task": "sr",
            "prior": "alr",
            "forward": {"kind": "sr", "width": side, "height": side, "factor": 2, "blur_sigma": 1.0},
            "patch": {"patch_size": 3, "stride": 1, "subset": null, "seed": 0},
            "prior_params": {"alr_hidden": [8], "alr_steps": 100, "alr_batch": 16},
            "solver": {"iterations": 20, "lr": 0.02, "weight": 1e-4},
            "reference_images": [dir.join("ref.pgm")],
            "ground_truth": dir.join("truth.pgm"),
            "observation": dir.join("sim").join("observation.raw"),
            "checkpoint": dir.join("fit").join("prior.ckpt"),
            "seed": 3
        })
        .to_string(),
    )
    .unwrap();
    // the degraded source is the observation, which does not exist yet
    let out = run(&["fit-prior", "--config", cfg.to_str().unwrap(), "--out", dir.join("f0").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.join("sim").to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&["fit-prior", "--config", cfg.to_str().unwrap(), "--out", dir.join("fit").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = load_checkpoint(dir.join("fit").join("prior.ckpt")).unwrap();
    assert!(matches!(ckpt.payload, CheckpointPayload::Alr(_)));
    let out = run(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", dir.join("rec").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn checkpoint_patch_size_mismatch_is_refused() {
    let dir = tmp_dir("mismatch");
    let side = 20;
    let truth = texture(side, 61);
    save_pgm(&truth, &dir.join("ref.pgm"), 16).unwrap();
    save_pgm(&truth, &dir.join("truth.pgm"), 16).unwrap();
    let write_cfg = |patch: usize| {
        let cfg = dir.join(format!("p{patch}.json"));
        std::fs::write(
            &cfg,
            serde_json::json!({
                "task": "sr",
                "prior": "epll",
                "forward": {"kind": "sr", "width": side, "height": side, "factor": 2, "blur_sigma": 1.0},
                "patch": {"patch_size": patch, "stride": 1, "subset": null, "seed": 0},
                "prior_params": {"k": 2, "em_max_iters": 5},
                "solver": {"iterations": 5, "lr": 0.01, "weight": 1e-4},
                "reference_images": [dir.join("ref.pgm")],
                "ground_truth": dir.join("truth.pgm"),
                "observation": dir.join("sim").join("observation.raw"),
                "checkpoint": dir.join("fit").join("prior.ckpt"),
                "seed": 4
            })
            .to_string(),
        )
        .unwrap();
        cfg
    };
    let cfg3 = write_cfg(3);
    let cfg4 = write_cfg(4);
    let out = run(&["simulate", "--config", cfg3.to_str().unwrap(), "--out", dir.join("sim").to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&["fit-prior", "--config", cfg3.to_str().unwrap(), "--out", dir.join("fit").to_str().unwrap()]);
    assert!(out.status.success());
    // reconstruct with a different patch size must be refused, not resized
    let out = run(&["reconstruct", "--config", cfg4.to_str().unwrap(), "--out", dir.join("rec").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(msg.contains("patch size 3") && msg.contains("asks for 4"), "diagnostic: {msg}");
}
