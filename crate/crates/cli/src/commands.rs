//! The five subcommands. Each one is an idempotent orchestration: given
//! the same config and a clean output directory it writes the same bytes.

use crate::config::{DatasetConfig, Experiment, StatsModeConfig};
use crate::plot;
use anyhow::{bail, Context, Result};
use std::fs;
use std::path::{Path, PathBuf};
use vdu_core::checkpoints::{
    estimate_posterior_stats, load_checkpoint, load_stats, save_checkpoint, save_stats,
    single_run_snapshot_epochs, Checkpoint, CheckpointMeta, ParamPosteriorStats, StatsMode,
};
use vdu_core::data::split_forget;
use vdu_core::denoiser::init_params;
use vdu_core::diffgraph::ParamVector;
use vdu_core::diffusion;
use vdu_core::eval::{evaluate_from_samples, reports_to_csv, ClassifierModel, EvalReport};
use vdu_core::vdu::{self, trace_to_csv, DdpmTrainConfig};

fn checkpoint_path(dir: &Path, seed: u64, epoch: usize) -> PathBuf {
    dir.join(format!("ckpt-s{seed:06}-e{epoch:04}.vdu1"))
}

fn stats_path(out_dir: &Path) -> PathBuf {
    out_dir.join("stats.vdus")
}

fn theta_u_path(dir: &Path, gamma: f64) -> PathBuf {
    dir.join(format!("theta-u-gamma{gamma}.vdu1"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Train one independent model per configured seed and persist final
/// checkpoints; in single_run mode, also snapshot the late epochs of the
/// (single) run for the stats estimator.
pub fn cmd_pretrain(exp: &Experiment) -> Result<()> {
    let data = exp.dataset()?;
    let coords = data.coords();
    let ckpt_dir = exp.out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;

    let p = &exp.config.pretrain;
    let snapshot_epochs = match exp.config.stats.mode {
        StatsModeConfig::SingleRun => single_run_snapshot_epochs(
            p.epochs,
            exp.config.stats.snapshots.expect("validated"),
            exp.config.stats.spacing.expect("validated"),
        )?,
        StatsModeConfig::MultiRun => Vec::new(),
    };
    let dataset_name = exp.config.dataset.name();

    for (i, &seed) in p.seeds.iter().enumerate() {
        let cfg = DdpmTrainConfig {
            epochs: p.epochs,
            eta: p.eta,
            batch_size: p.batch_size,
            seed,
        };
        let p0 = init_params(&exp.arch, p.init_seed)?;
        let make_checkpoint = |epoch: usize, params: &ParamVector| -> Result<Checkpoint> {
            Ok(Checkpoint::new(
                exp.arch.clone(),
                *exp.schedule.params(),
                CheckpointMeta {
                    seed,
                    epoch,
                    dataset: dataset_name.clone(),
                },
                params.clone(),
            )?)
        };
        let rec = vdu::train_ddpm(
            &exp.schedule,
            &exp.arch,
            p0,
            &coords,
            &cfg,
            |epoch, params| {
                // The final epoch is saved below from the train record.
                if i == 0 && epoch != p.epochs && snapshot_epochs.contains(&epoch) {
                    let cp = make_checkpoint(epoch, params)
                        .map_err(|e| vdu_core::Error::Format(e.to_string()))?;
                    save_checkpoint(checkpoint_path(&ckpt_dir, seed, epoch), &cp)?;
                }
                Ok(())
            },
        )?;
        let cp = make_checkpoint(p.epochs, &rec.params)?;
        let path = checkpoint_path(&ckpt_dir, seed, p.epochs);
        save_checkpoint(&path, &cp)?;
        println!(
            "run {i} (seed {seed}): {} epochs, final loss {:.6} -> {}",
            p.epochs,
            rec.epoch_losses.last().unwrap(),
            path.display()
        );
    }
    Ok(())
}

fn load_all_checkpoints(ckpt_dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(ckpt_dir)
        .with_context(|| format!("reading {}", ckpt_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "vdu1"))
        .collect();
    // Filename order, so the estimate is independent of directory
    // enumeration order.
    paths.sort();
    if paths.is_empty() {
        bail!(
            "no checkpoints in {}; run `vdu pretrain` first",
            ckpt_dir.display()
        );
    }
    paths
        .iter()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// Estimate (μ*, σ*) from every checkpoint in the output directory and
/// persist the stats file.
pub fn cmd_stats(exp: &Experiment) -> Result<()> {
    let ckpt_dir = exp.out_dir.join("checkpoints");
    let checkpoints = load_all_checkpoints(&ckpt_dir)?;
    for cp in &checkpoints {
        cp.ensure_arch(&exp.arch)?;
    }
    let stats = estimate_posterior_stats(
        &checkpoints,
        exp.config.stats.sigma_floor,
        exp.config.stats.sigma_ceiling,
    )?;

    let want = match exp.config.stats.mode {
        StatsModeConfig::MultiRun => StatsMode::MultiRun,
        StatsModeConfig::SingleRun => StatsMode::SingleRun,
    };
    if stats.mode != want {
        bail!(
            "checkpoint seeds imply {:?} statistics but the config says {:?}; \
             re-run `vdu pretrain` with this config",
            stats.mode,
            want
        );
    }

    let path = stats_path(&exp.out_dir);
    save_stats(&path, &stats)?;
    let (lo, hi) = stats
        .sigma_star
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    println!(
        "{} checkpoints ({:?}) -> {} | sigma* in [{:.3e}, {:.3e}], band [{:.3e}, {:.3e}]",
        stats.n_checkpoints,
        stats.mode,
        path.display(),
        lo,
        hi,
        stats.sigma_floor,
        stats.sigma_ceiling
    );
    Ok(())
}

/// θ* is, by convention, the final checkpoint of the first configured
/// pretrain seed.
fn load_theta_star(exp: &Experiment) -> Result<Checkpoint> {
    let path = checkpoint_path(
        &exp.out_dir.join("checkpoints"),
        exp.config.pretrain.seeds[0],
        exp.config.pretrain.epochs,
    );
    let cp = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    cp.ensure_arch(&exp.arch)?;
    if cp.schedule != *exp.schedule.params() {
        bail!(
            "checkpoint schedule {:?} does not match the config's {:?}",
            cp.schedule,
            exp.schedule.params()
        );
    }
    Ok(cp)
}

fn load_stats_file(exp: &Experiment) -> Result<ParamPosteriorStats> {
    let path = stats_path(&exp.out_dir);
    load_stats(&path).with_context(|| format!("loading {}; run `vdu stats` first", path.display()))
}

struct UnlearnOutcome {
    params: ParamVector,
    trace_csv: String,
}

fn run_unlearn(
    exp: &Experiment,
    theta_star: &ParamVector,
    stats: &ParamPosteriorStats,
    gamma: f64,
) -> Result<UnlearnOutcome> {
    let data = exp.dataset()?;
    let (d_f, _) = split_forget(&data, exp.config.dataset.forget_labels())?;
    let mut cfg = exp.config.unlearn.clone();
    cfg.gamma = gamma;
    let rec = vdu::unlearn(
        &exp.schedule,
        &exp.arch,
        theta_star,
        &d_f.coords(),
        stats,
        &cfg,
    )?;
    let last = rec.epochs.last().expect("epochs >= 1");
    println!(
        "gamma {gamma}: {} epochs in {:.1}s | plasticity {:.4}, stability {:.4}, |theta-mu*| {:.4}",
        rec.epochs.len(),
        rec.wall_clock.as_secs_f64(),
        last.plasticity,
        last.stability,
        last.dist_to_mu
    );
    let trace_csv = trace_to_csv(&rec);
    Ok(UnlearnOutcome {
        params: rec.params,
        trace_csv,
    })
}

fn save_theta_u(
    exp: &Experiment,
    dir: &Path,
    gamma: f64,
    outcome: &UnlearnOutcome,
) -> Result<PathBuf> {
    let cp = Checkpoint::new(
        exp.arch.clone(),
        *exp.schedule.params(),
        CheckpointMeta {
            seed: exp.config.unlearn.seed,
            epoch: exp.config.unlearn.epochs,
            dataset: exp.config.dataset.name(),
        },
        outcome.params.clone(),
    )?;
    let path = theta_u_path(dir, gamma);
    save_checkpoint(&path, &cp)?;
    write_text(
        &dir.join(format!("trace-gamma{gamma}.csv")),
        &outcome.trace_csv,
    )?;
    Ok(path)
}

/// Run the unlearning loop at the configured γ and persist θᵘ plus its
/// per-epoch loss trace.
pub fn cmd_unlearn(exp: &Experiment) -> Result<()> {
    let theta_star = load_theta_star(exp)?;
    let stats = load_stats_file(exp)?;
    let dir = exp.out_dir.join("unlearned");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let gamma = exp.config.unlearn.gamma;
    let outcome = run_unlearn(exp, &theta_star.params, &stats, gamma)?;
    let path = save_theta_u(exp, &dir, gamma, &outcome)?;
    println!("unlearned parameters -> {}", path.display());
    Ok(())
}

/// Everything evaluation needs that is independent of the model pair.
struct EvalContext {
    classifier: ClassifierModel,
    d_r_reference: Vec<Vec<f64>>,
    extent: f64,
}

fn eval_context(exp: &Experiment) -> Result<EvalContext> {
    let Some(spec) = exp.config.dataset.mixture_spec()? else {
        bail!(
            "eval and sweep need the nearest-mode classifier, which only the 2-D \
             mixture dataset provides; image datasets stop at unlearn"
        );
    };
    let holdout = vdu_core::data::sample_mixture(
        &spec,
        exp.config.eval.holdout_n,
        exp.config.eval.holdout_seed,
    )?;
    let (_, d_r) = split_forget(&holdout, exp.config.dataset.forget_labels())?;
    let extent = match &exp.config.dataset {
        DatasetConfig::Mixture {
            ring_radius,
            ring_std,
            ..
        } => ring_radius + 6.0 * ring_std,
        DatasetConfig::Idx { .. } => unreachable!("mixture_spec gated above"),
    };
    Ok(EvalContext {
        classifier: ClassifierModel::nearest_mode(spec)?,
        d_r_reference: d_r.coords(),
        extent,
    })
}

fn emit_samples(
    dir: &Path,
    stem: &str,
    title: &str,
    samples: &[Vec<f64>],
    ctx: &EvalContext,
) -> Result<()> {
    write_text(
        &dir.join(format!("samples-{stem}.csv")),
        &plot::samples_csv(samples, &ctx.classifier)?,
    )?;
    write_text(
        &dir.join(format!("scatter-{stem}.svg")),
        &plot::scatter_svg(title, samples, &ctx.classifier, ctx.extent)?,
    )?;
    Ok(())
}

fn evaluate_pair(
    exp: &Experiment,
    ctx: &EvalContext,
    pre: &[Vec<f64>],
    theta_u: &ParamVector,
    gamma: f64,
    dir: &Path,
    stem: &str,
) -> Result<EvalReport> {
    let post = diffusion::sample(
        &exp.schedule,
        &exp.arch,
        theta_u,
        exp.config.eval.n_samples,
        exp.config.eval.seed,
    )?;
    emit_samples(dir, stem, &format!("unlearned (gamma={gamma})"), &post, ctx)?;
    let report = evaluate_from_samples(
        &ctx.classifier,
        pre,
        &post,
        &ctx.d_r_reference,
        exp.config.dataset.forget_labels(),
        gamma,
        exp.config.eval.seed,
    )?;
    println!(
        "gamma {gamma}: PUL {:.2}% ({} -> {} forget samples), u-FID {:.4}",
        report.pul_percent,
        report.count_forget_pretrained,
        report.count_forget_unlearned,
        report.u_fid
    );
    Ok(report)
}

fn sample_pretrained(exp: &Experiment, theta_star: &ParamVector) -> Result<Vec<Vec<f64>>> {
    Ok(diffusion::sample(
        &exp.schedule,
        &exp.arch,
        theta_star,
        exp.config.eval.n_samples,
        exp.config.eval.seed,
    )?)
}

/// Score the persisted θᵘ against θ* and emit the report plus plot data.
pub fn cmd_eval(exp: &Experiment) -> Result<()> {
    let theta_star = load_theta_star(exp)?;
    let gamma = exp.config.unlearn.gamma;
    let theta_u_file = theta_u_path(&exp.out_dir.join("unlearned"), gamma);
    let theta_u = load_checkpoint(&theta_u_file).with_context(|| {
        format!(
            "loading {}; run `vdu unlearn` first",
            theta_u_file.display()
        )
    })?;
    theta_u.ensure_arch(&exp.arch)?;

    let ctx = eval_context(exp)?;
    let dir = exp.out_dir.join("eval");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let pre = sample_pretrained(exp, &theta_star.params)?;
    emit_samples(&dir, "pretrained", "pretrained", &pre, &ctx)?;
    let report = evaluate_pair(exp, &ctx, &pre, &theta_u.params, gamma, &dir, "unlearned")?;
    write_text(&dir.join("report.csv"), &reports_to_csv(&[report]))?;
    println!("report -> {}", dir.join("report.csv").display());
    Ok(())
}

/// Continue plain denoising training from θ* on the retain split and
/// score the result exactly like an unlearning run. This is the
/// reference everything else is judged against; its report row carries
/// gamma = -1 to mark that no unlearning loss was involved.
pub fn cmd_finetune(exp: &Experiment) -> Result<()> {
    let theta_star = load_theta_star(exp)?;
    let data = exp.dataset()?;
    let (_, d_r) = split_forget(&data, exp.config.dataset.forget_labels())?;
    let ft = &exp.config.finetune;
    let cfg = vdu::DdpmTrainConfig {
        epochs: ft.epochs,
        eta: ft.eta,
        batch_size: ft.batch_size,
        seed: ft.seed,
    };
    let start = std::time::Instant::now();
    let params = vdu::finetune_with_retain(
        &exp.schedule,
        &exp.arch,
        &theta_star.params,
        &d_r.coords(),
        &cfg,
    )?;
    println!(
        "finetune: {} epoch(s) on {} retain samples in {:.1}s",
        ft.epochs,
        d_r.len(),
        start.elapsed().as_secs_f64()
    );

    let ctx = eval_context(exp)?;
    let dir = exp.out_dir.join("finetune");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let cp = Checkpoint::new(
        exp.arch.clone(),
        *exp.schedule.params(),
        CheckpointMeta {
            seed: ft.seed,
            epoch: ft.epochs,
            dataset: exp.config.dataset.name(),
        },
        params.clone(),
    )?;
    save_checkpoint(dir.join("theta-ft.vdu1"), &cp)?;

    let pre = sample_pretrained(exp, &theta_star.params)?;
    emit_samples(&dir, "pretrained", "pretrained", &pre, &ctx)?;
    let report = evaluate_pair(exp, &ctx, &pre, &params, -1.0, &dir, "finetuned")?;
    write_text(&dir.join("report.csv"), &reports_to_csv(&[report]))?;
    println!("finetune report -> {}", dir.join("report.csv").display());
    Ok(())
}

/// Unlearn and evaluate once per configured γ against the shared θ* and
/// seeds; one report row per γ, in config order.
pub fn cmd_sweep(exp: &Experiment) -> Result<()> {
    let theta_star = load_theta_star(exp)?;
    let stats = load_stats_file(exp)?;
    let ctx = eval_context(exp)?;
    let dir = exp.out_dir.join("sweep");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let pre = sample_pretrained(exp, &theta_star.params)?;
    emit_samples(&dir, "pretrained", "pretrained", &pre, &ctx)?;

    let mut reports = Vec::new();
    for &gamma in &exp.config.sweep.gammas {
        let outcome = run_unlearn(exp, &theta_star.params, &stats, gamma)?;
        save_theta_u(exp, &dir, gamma, &outcome)?;
        reports.push(evaluate_pair(
            exp,
            &ctx,
            &pre,
            &outcome.params,
            gamma,
            &dir,
            &format!("gamma{gamma}"),
        )?);
    }
    write_text(&dir.join("report.csv"), &reports_to_csv(&reports))?;
    println!("sweep report -> {}", dir.join("report.csv").display());
    Ok(())
}
