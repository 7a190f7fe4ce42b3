//! Command-line driver: fit priors, simulate observations, reconstruct,
//! sample posteriors, evaluate OT instances and image metrics.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 numerical failure, 4 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchprior::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointPayload};
use patchprior::config::{
    load_run_config, solver_adam, ForwardConfig, PriorKind, RunConfig, Task,
};
use patchprior::error::Error;
use patchprior::flow::{train_flow, FlowSpec, FlowTrainConfig};
use patchprior::forward::{
    simulate_observation, DataTerm, ForwardOp, InpaintModel, NoiseSpec, RadonModel,
    SuperResModel,
};
use patchprior::gmm::{em_fit_points, EmConfig};
use patchprior::image::{extract_patches, Image, PatchConfig};
use patchprior::io::{load_pgm, load_raw, save_pgm, save_raw, RawKind};
use patchprior::measure::{parse_measure_csv, DiscreteMeasure};
use patchprior::metrics;
use patchprior::ot::{
    plan_from_potentials, sinkhorn, sinkhorn_value, w2_exact_small, SinkhornConfig,
};
use patchprior::recon::{
    inpaint_map, map_reconstruct, posterior_stats, ula_sample, InitScheme, MapConfig, UlaConfig,
};
use patchprior::regularizer::{
    AlrPrior, EpllPrior, PatchNrPrior, Regularizer, SinkhornPrior, WppPrior, WppSolver,
};
use patchprior::tape::AdamParams;
use patchprior::alr::{degraded_patch_source, train_alr, AlrTrainConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "patchprior", version, about = "Patch-based image priors for inverse problems")]
struct Cli {
    /// Verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Trains or assembles the configured prior and writes a checkpoint.
    FitPrior(RunArgs),
    /// Applies the forward model and noise to the ground truth.
    Simulate(RunArgs),
    /// MAP reconstruction from an observation and a prior checkpoint.
    Reconstruct(RunArgs),
    /// Langevin posterior sampling; writes the sample stack and statistics.
    Sample(RunArgs),
    /// Discrete optimal transport between two CSV measures.
    Ot {
        /// Source measure CSV (coordinates..., weight per row).
        #[arg(long)]
        mu: PathBuf,
        /// Target measure CSV.
        #[arg(long)]
        nu: PathBuf,
        /// Entropic weight; omit for the exact LP solver.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Marginal relaxation (semi-unbalanced); requires --epsilon.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Output JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the transport plan as CSV next to the report.
        #[arg(long)]
        plan: bool,
    },
    /// PSNR/SSIM of images against a reference; emits CSV rows.
    Metrics {
        /// Reference image (PGM or float-raw).
        #[arg(long)]
        reference: PathBuf,
        /// Images to evaluate.
        images: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Ok(threads) = std::env::var("PATCHPRIOR_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }

    let result = match cli.command {
        Command::FitPrior(args) => cmd_fit_prior(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Reconstruct(args) => cmd_reconstruct(&args),
        Command::Sample(args) => cmd_sample(&args),
        Command::Ot { mu, nu, epsilon, rho, max_iter, tol, out, plan } => {
            cmd_ot(&mu, &nu, epsilon, rho, max_iter, tol, &out, plan)
        }
        Command::Metrics { reference, images } => cmd_metrics(&reference, &images),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Invalid(_) => 2,
                Error::Numerics(_) => 3,
                Error::Format(_) | Error::Io(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

type CliResult = Result<(), Error>;

fn load_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&args.out)?;
    Ok(cfg)
}

fn load_image_any(path: impl AsRef<Path>) -> Result<Image, Error> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => Ok(load_raw(path)?.1),
        _ => load_pgm(path),
    }
}

fn build_forward(cfg: &RunConfig) -> Result<ForwardOp, Error> {
    match &cfg.forward {
        ForwardConfig::Ct {
            image_size,
            n_angles,
            n_detectors,
            angle_range,
            freq_scaling,
            ..
        } => {
            let mut model = RadonModel::new(*image_size, *n_angles, *n_detectors)?;
            model.freq_scaling = *freq_scaling;
            if let Some((start, end)) = angle_range {
                model = model.with_angle_range(*start, *end)?;
            }
            Ok(ForwardOp::Radon(model))
        }
        ForwardConfig::Sr { width, height, factor, blur_sigma, .. } => Ok(ForwardOp::SuperRes(
            SuperResModel::new(*blur_sigma, *factor, *width, *height)?,
        )),
        ForwardConfig::Inpaint { mask } => {
            let mask = load_image_any(mask)?;
            Ok(ForwardOp::Inpaint(InpaintModel::new(mask)?))
        }
    }
}

fn noise_of(cfg: &RunConfig) -> NoiseSpec {
    match &cfg.forward {
        ForwardConfig::Ct { n0, mu_norm, .. } => NoiseSpec::PoissonCt { n0: *n0, mu_norm: *mu_norm },
        ForwardConfig::Sr { noise_sigma, .. } => NoiseSpec::Gaussian { sigma: *noise_sigma },
        ForwardConfig::Inpaint { .. } => NoiseSpec::None,
    }
}

fn data_term_of(cfg: &RunConfig) -> DataTerm {
    match &cfg.forward {
        ForwardConfig::Ct { n0, mu_norm, .. } => DataTerm::PoissonCt { n0: *n0, mu_norm: *mu_norm },
        ForwardConfig::Sr { noise_sigma, .. } => DataTerm::GaussianL2 { sigma: noise_sigma.max(1e-6) },
        ForwardConfig::Inpaint { .. } => DataTerm::Equality,
    }
}

/// Patches fully inside the observed (mask = 1) region.
fn observed_patches(observation: &Image, mask: &Image, patch: &PatchConfig) -> Result<Vec<Vec<f64>>, Error> {
    let all = extract_patches(observation, patch)?;
    let p = patch.patch_size;
    let mut kept = Vec::new();
    for (v, &(r0, c0)) in all.vectors().iter().zip(all.origins()) {
        let mut inside = true;
        'scan: for dr in 0..p {
            for dc in 0..p {
                if mask.get(r0 + dr, c0 + dc) != 1.0 {
                    inside = false;
                    break 'scan;
                }
            }
        }
        if inside {
            kept.push(v.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("no patches lie fully inside the observed region"));
    }
    Ok(kept)
}

/// Reference patch vectors for prior fitting. Zero-shot tasks read the
/// observation itself (inpainting restricted to the observed area).
fn reference_patches(cfg: &RunConfig) -> Result<Vec<Vec<f64>>, Error> {
    match cfg.task {
        Task::Inpaint => {
            let obs_path = cfg
                .observation
                .as_ref()
                .ok_or_else(|| Error::invalid("inpainting prior fit needs `observation`"))?;
            let observation = load_image_any(obs_path)?;
            let ForwardConfig::Inpaint { mask } = &cfg.forward else { unreachable!() };
            let mask = load_image_any(mask)?;
            observed_patches(&observation, &mask, &cfg.patch)
        }
        Task::ZeroShotSr => {
            // the observation's own patch statistics (scale self-similarity)
            let obs_path = cfg
                .observation
                .as_ref()
                .ok_or_else(|| Error::invalid("zero-shot prior fit needs `observation`"))?;
            let observation = load_image_any(obs_path)?;
            let patches = extract_patches(&observation, &cfg.patch)?;
            Ok(patches.vectors().to_vec())
        }
        Task::Ct | Task::Sr => {
            if cfg.reference_images.is_empty() {
                return Err(Error::invalid("prior fit needs `reference_images`"));
            }
            let mut all = Vec::new();
            for path in &cfg.reference_images {
                let img = load_image_any(path)?;
                let patches = extract_patches(&img, &cfg.patch)?;
                all.extend(patches.vectors().iter().cloned());
            }
            Ok(all)
        }
    }
}

fn cmd_fit_prior(args: &RunArgs) -> CliResult {
    let cfg = load_config(args)?;
    let patches = reference_patches(&cfg)?;
    let pp = &cfg.prior_params;
    let mut extra = json!({ "seed": cfg.seed, "n_patches": patches.len() });
    let mut aborted = None;

    let payload = match cfg.prior {
        PriorKind::Epll => {
            let em = EmConfig {
                k: pp.k,
                max_iters: pp.em_max_iters,
                tol: pp.em_tol,
                cov_floor: 0.0,
                seed: cfg.seed,
            };
            let fit = em_fit_points(&patches, &em)?;
            extra["loglik"] = json!(fit.loglik_trace.last());
            CheckpointPayload::Gmm(fit.model)
        }
        PriorKind::Patchnr => {
            let spec = FlowSpec::new(cfg.patch.dim(), pp.flow_layers, pp.flow_hidden.clone(), pp.flow_clamp)?;
            let train = FlowTrainConfig {
                steps: pp.flow_steps,
                batch_size: pp.flow_batch.min(patches.len()),
                adam: AdamParams::with_lr(pp.flow_lr),
                seed: cfg.seed,
            };
            let result = train_flow(&patches, spec, &train)?;
            extra["final_loss"] = json!(result.final_loss);
            aborted = result.aborted_at;
            CheckpointPayload::Flow(result.model)
        }
        PriorKind::Alr => {
            let obs_path = cfg
                .observation
                .as_ref()
                .ok_or_else(|| Error::invalid("alr fit needs `observation` for the degraded patches"))?;
            let observation = load_image_any(obs_path)?;
            let forward = build_forward(&cfg)?;
            let degraded = degraded_patch_source(&observation, &forward, &cfg.patch)?
                .vectors()
                .to_vec();
            let train = AlrTrainConfig {
                penalty_weight: pp.alr_penalty_weight,
                batch_size: pp.alr_batch,
                steps: pp.alr_steps,
                adam: AdamParams::with_lr(pp.alr_lr),
                hidden: pp.alr_hidden.clone(),
                seed: cfg.seed,
            };
            let result = train_alr(&patches, &degraded, &train)?;
            extra["gap"] = json!(result.gap);
            aborted = result.aborted_at;
            CheckpointPayload::Alr(result.discriminator)
        }
        PriorKind::Wpp | PriorKind::WppEps | PriorKind::WppEpsRho => {
            // no training: the checkpoint is the reference patch measure
            let measure = DiscreteMeasure::uniform(patches)?;
            CheckpointPayload::Measure(measure)
        }
    };

    let ckpt = Checkpoint { payload, patch: cfg.patch.clone(), extra: extra.clone() };
    let ckpt_path = args.out.join("prior.ckpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    let report = json!({
        "checkpoint": ckpt_path,
        "prior": cfg.prior,
        "config": cfg,
        "fit": extra,
        "aborted_at": aborted,
    });
    std::fs::write(args.out.join("fit.json"), serde_json::to_vec_pretty(&report).unwrap())?;
    if let Some(step) = aborted {
        return Err(Error::numerics(format!(
            "training aborted at step {step}; last checkpoint written to {}",
            ckpt_path.display()
        )));
    }
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> CliResult {
    let cfg = load_config(args)?;
    let gt_path = cfg
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::invalid("simulate needs `ground_truth`"))?;
    let truth = load_image_any(gt_path)?;
    let forward = build_forward(&cfg)?;
    let noise = noise_of(&cfg);
    let observation = simulate_observation(forward.op(), &truth, &noise, cfg.seed)?;

    let kind = match cfg.task {
        Task::Ct => RawKind::Sinogram,
        _ => RawKind::Image,
    };
    save_raw(&observation, kind, args.out.join("observation.raw"))?;
    if kind == RawKind::Image {
        save_pgm(&observation, args.out.join("observation.pgm"), 16)?;
    }
    save_raw(&truth, RawKind::Image, args.out.join("ground_truth.raw"))?;
    let report = json!({ "config": cfg, "noise": noise, "observation": args.out.join("observation.raw") });
    std::fs::write(args.out.join("simulate.json"), serde_json::to_vec_pretty(&report).unwrap())?;
    println!("wrote {}", args.out.join("observation.raw").display());
    Ok(())
}

fn build_regularizer(cfg: &RunConfig, ckpt: Checkpoint) -> Result<Box<dyn Regularizer>, Error> {
    if ckpt.patch.patch_size != cfg.patch.patch_size {
        return Err(Error::invalid(format!(
            "checkpoint was fit with patch size {} but the run config asks for {}; refusing to resize",
            ckpt.patch.patch_size, cfg.patch.patch_size
        )));
    }
    // evaluation geometry (stride/subset) comes from the run config
    let patch = cfg.patch.clone();
    let pp = &cfg.prior_params;
    let reg: Box<dyn Regularizer> = match (cfg.prior, ckpt.payload) {
        (PriorKind::Epll, CheckpointPayload::Gmm(model)) => {
            Box::new(EpllPrior::new(model, patch))
        }
        (PriorKind::Patchnr, CheckpointPayload::Flow(model)) => {
            Box::new(PatchNrPrior::new(model, patch))
        }
        (PriorKind::Alr, CheckpointPayload::Alr(discriminator)) => {
            Box::new(AlrPrior::new(discriminator, patch))
        }
        (PriorKind::Wpp, CheckpointPayload::Measure(reference)) => {
            let mut prior = WppPrior::new(
                reference,
                patch,
                WppSolver::Auto(pp.semidual_config(cfg.seed)),
            )
            .with_seed(cfg.seed);
            prior.max_reference = pp.max_reference;
            Box::new(prior)
        }
        (PriorKind::WppEps, CheckpointPayload::Measure(reference)) => {
            let mut prior =
                SinkhornPrior::new(reference, patch, pp.sinkhorn_config(None)).with_seed(cfg.seed);
            prior.max_reference = pp.max_reference;
            Box::new(prior)
        }
        (PriorKind::WppEpsRho, CheckpointPayload::Measure(reference)) => {
            let mut prior = SinkhornPrior::new(reference, patch, pp.sinkhorn_config(Some(pp.rho)))
                .with_seed(cfg.seed);
            prior.max_reference = pp.max_reference;
            Box::new(prior)
        }
        (kind, payload) => {
            return Err(Error::invalid(format!(
                "prior {kind:?} does not match checkpoint kind {:?}",
                payload.kind()
            )))
        }
    };
    Ok(reg)
}

fn load_problem(cfg: &RunConfig) -> Result<(patchprior::recon::ReconProblem, Image), Error> {
    let obs_path = cfg
        .observation
        .as_ref()
        .ok_or_else(|| Error::invalid("missing `observation` in config"))?;
    let observation = load_image_any(obs_path)?;
    let ckpt_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::invalid("missing `checkpoint` in config"))?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let forward = build_forward(cfg)?;
    let regularizer = build_regularizer(cfg, ckpt)?;
    let problem = patchprior::recon::ReconProblem {
        forward,
        data_term: data_term_of(cfg),
        regularizer,
        weight: cfg.solver.weight,
    };
    Ok((problem, observation))
}

fn init_scheme(cfg: &RunConfig) -> Result<InitScheme, Error> {
    match cfg.solver.init.as_str() {
        // fbp / bicubic / zero-fill are the task-specific names of the same
        // naive inversion
        "naive_inversion" | "fbp" | "bicubic" | "zero-fill" => Ok(InitScheme::NaiveInversion),
        "zero" => Ok(InitScheme::Zero),
        other => Err(Error::invalid(format!("unknown init scheme {other:?}"))),
    }
}

fn write_recon_outputs(
    out: &Path,
    cfg: &RunConfig,
    image: &Image,
    trace: &[f64],
    aborted: Option<usize>,
) -> CliResult {
    save_raw(image, RawKind::Image, out.join("reconstruction.raw"))?;
    save_pgm(image, out.join("reconstruction.pgm"), 16)?;
    let mut report = json!({
        "config": cfg,
        "objective_trace": trace,
        "aborted_at": aborted,
    });
    if let Some(gt) = &cfg.ground_truth {
        let truth = load_image_any(gt)?;
        if truth.same_shape(image) {
            report["psnr"] = json!(metrics::psnr(&truth, image, 1.0)?);
            if truth.width() >= 11 && truth.height() >= 11 {
                report["ssim"] = json!(metrics::ssim(&truth, image)?);
            }
        }
    }
    std::fs::write(out.join("report.json"), serde_json::to_vec_pretty(&report).unwrap())?;
    Ok(())
}

fn cmd_reconstruct(args: &RunArgs) -> CliResult {
    let cfg = load_config(args)?;
    let (problem, observation) = load_problem(&cfg)?;
    let map_cfg = MapConfig {
        iterations: cfg.solver.iterations,
        adam: solver_adam(&cfg.solver),
        init: init_scheme(&cfg)?,
        seed: cfg.seed,
        skip_gradient_check: false,
    };
    let result = if problem.data_term.is_equality() {
        inpaint_map(&problem, &observation, &map_cfg)?
    } else {
        map_reconstruct(&problem, &observation, &map_cfg)?
    };
    write_recon_outputs(&args.out, &cfg, &result.image, &result.objective_trace, result.aborted_at)?;
    if let Some(step) = result.aborted_at {
        return Err(Error::numerics(format!("reconstruction aborted at step {step}")));
    }
    println!("wrote {}", args.out.join("reconstruction.raw").display());
    Ok(())
}

fn cmd_sample(args: &RunArgs) -> CliResult {
    let cfg = load_config(args)?;
    let (problem, observation) = load_problem(&cfg)?;
    let clip = cfg.solver.ula_clip || matches!(cfg.prior, PriorKind::Alr);
    let ula = UlaConfig {
        step: cfg.solver.ula_step,
        burn_in: cfg.solver.ula_burn_in,
        n_samples: cfg.solver.ula_samples,
        thinning: cfg.solver.ula_thinning,
        clip,
        seed: cfg.seed,
        init: init_scheme(&cfg)?,
    };
    let result = ula_sample(&problem, &observation, &ula)?;
    for (i, sample) in result.samples.iter().enumerate() {
        save_raw(sample, RawKind::Image, args.out.join(format!("sample_{i:03}.raw")))?;
    }
    let mut report = json!({
        "config": cfg,
        "n_samples": result.samples.len(),
        "aborted_at": result.aborted_at,
        "clip": clip,
    });
    if result.samples.len() >= 2 {
        let (mean, std) = posterior_stats(&result.samples)?;
        save_raw(&mean, RawKind::Image, args.out.join("mean.raw"))?;
        save_raw(&std, RawKind::Image, args.out.join("std.raw"))?;
        save_pgm(&mean, args.out.join("mean.pgm"), 16)?;
        let max_std = std.data().iter().cloned().fold(0.0f64, f64::max);
        report["max_std"] = json!(max_std);
    }
    std::fs::write(args.out.join("sample.json"), serde_json::to_vec_pretty(&report).unwrap())?;
    if let Some(step) = result.aborted_at {
        return Err(Error::numerics(format!("chain diverged at step {step}")));
    }
    println!("wrote {} samples to {}", result.samples.len(), args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ot(
    mu_path: &Path,
    nu_path: &Path,
    epsilon: Option<f64>,
    rho: Option<f64>,
    max_iter: usize,
    tol: f64,
    out: &Path,
    write_plan: bool,
) -> CliResult {
    let mu = parse_measure_csv(&std::fs::read(mu_path)?, false)?;
    let nu = parse_measure_csv(&std::fs::read(nu_path)?, false)?;
    if rho.is_some() && epsilon.is_none() {
        return Err(Error::invalid("--rho requires --epsilon"));
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let plan_path = out.with_extension("plan.csv");
    let (value, iterations, converged, plan) = match epsilon {
        None => {
            let sol = w2_exact_small(&mu, &nu)?;
            (sol.value, 0usize, true, Some(sol.plan))
        }
        Some(eps) => {
            let cfg = SinkhornConfig { epsilon: eps, rho, max_iter, tol };
            let pots = sinkhorn(&mu, &nu, &cfg)?;
            let value = sinkhorn_value(&mu, &nu, &pots)?;
            let plan = if write_plan { Some(plan_from_potentials(&mu, &nu, &pots)?) } else { None };
            (value, pots.iterations, pots.converged, plan)
        }
    };
    let mut report = json!({
        "value": value,
        "iterations": iterations,
        "converged": converged,
        "plan_path": serde_json::Value::Null,
    });
    if write_plan {
        if let Some(plan) = plan {
            let mut csv = String::new();
            for i in 0..plan.weights.nrows() {
                let row: Vec<String> =
                    (0..plan.weights.ncols()).map(|k| plan.weights[[i, k]].to_string()).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            std::fs::write(&plan_path, csv)?;
            report["plan_path"] = json!(plan_path);
        }
    }
    std::fs::write(out, serde_json::to_vec_pretty(&report).unwrap())?;
    println!("{}", serde_json::to_string(&report).unwrap());
    Ok(())
}

fn cmd_metrics(reference: &Path, images: &[PathBuf]) -> CliResult {
    if images.is_empty() {
        return Err(Error::invalid("metrics: no images given"));
    }
    let truth = load_image_any(reference)?;
    let mut out = String::from("path,psnr,ssim\n");
    for path in images {
        let img = load_image_any(path)?;
        let psnr = metrics::psnr(&truth, &img, 1.0)?;
        let ssim = metrics::ssim(&truth, &img)?;
        out.push_str(&format!("{},{psnr},{ssim}\n", path.display()));
    }
    print!("{out}");
    Ok(())
}
