//! The DDPM machinery: forward noising, the exact Gaussian reverse
//! posterior, its model approximation, per-step KL terms, the standard
//! denoising training loss, and the ancestral sampler.
//!
//! Closed forms used throughout (all t are 1-based):
//!   marginal      x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε₀,  ε₀ ~ N(0, I)
//!   posterior     μ_q(t) = (√α_t(1−ᾱ_{t−1})·x_t + √ᾱ_{t−1}(1−α_t)·x₀)/(1−ᾱ_t)
//!                        = x_t/√α_t − (1−α_t)/(√(1−ᾱ_t)√α_t)·ε₀
//!                 σ²_q(t) = (1−α_t)(1−ᾱ_{t−1})/(1−ᾱ_t)
//!   KL (equal σ²) KL(q‖p) = ‖μ_q − μ_p‖² / (2σ²_q(t))
//!
//! The model posterior substitutes ε_θ(x_t, t) for ε₀ in the second mean
//! form. The final sampling step (t = 1) uses the mean only — no noise is
//! added — which is standard practice.

use crate::denoiser::{self, DenoiserArch};
use crate::diffgraph::{self, NodeId, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// A point x_t on the diffusion path; t = 0 is a clean data point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: usize,
}

/// Mean and (isotropic) variance of a reverse-step Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: Vec<f64>,
    pub var: f64,
}

/// One Monte-Carlo draw for the denoising loss: a timestep and the noise
/// realization ε₀.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Draw (t, ε₀) with t uniform in 1..=T and ε₀ ~ N(0, I).
pub fn draw_noise<R: Rng>(rng: &mut R, t_steps: usize, dim: usize) -> NoiseDraw {
    let t = rng.gen_range(1..=t_steps);
    let eps = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    NoiseDraw { t, eps }
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
pub fn forward_noise(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    eps: &[f64],
) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::DimMismatch {
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let ab = schedule.alpha_bar(t)?;
    let (cs, cn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| cs * x + cn * e).collect())
}

fn require_t_ge_2(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    schedule.alpha(t)?;
    if t < 2 {
        return Err(Error::InvalidArgument(
            "reverse posterior is defined for t >= 2".into(),
        ));
    }
    Ok(())
}

/// μ_q(t) from the two-sided form conditioning on both x_t and x₀.
pub fn true_posterior(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    x0: &[f64],
    t: usize,
) -> Result<PosteriorParams> {
    require_t_ge_2(schedule, t)?;
    if x_t.len() != x0.len() {
        return Err(Error::DimMismatch {
            expected: x_t.len(),
            got: x0.len(),
        });
    }
    let a_t = schedule.alpha(t)?;
    let ab_t = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t - 1)?;
    let c_xt = a_t.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let c_x0 = ab_prev.sqrt() * (1.0 - a_t) / (1.0 - ab_t);
    let mean = x_t
        .iter()
        .zip(x0)
        .map(|(xt, x)| c_xt * xt + c_x0 * x)
        .collect();
    Ok(PosteriorParams {
        mean,
        var: schedule.posterior_var(t)?,
    })
}

/// Reverse-step mean in its ε-form, μ = x_t/√α_t − (1−α_t)/(√(1−ᾱ_t)√α_t)·ε.
/// Valid down to t = 1, where it is the noise-free final step.
pub fn reverse_mean_from_eps(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    eps: &[f64],
) -> Result<Vec<f64>> {
    if x_t.len() != eps.len() {
        return Err(Error::DimMismatch {
            expected: x_t.len(),
            got: eps.len(),
        });
    }
    let a_t = schedule.alpha(t)?;
    let ab_t = schedule.alpha_bar(t)?;
    let c1 = 1.0 / a_t.sqrt();
    let c2 = (1.0 - a_t) / ((1.0 - ab_t).sqrt() * a_t.sqrt());
    Ok(x_t
        .iter()
        .zip(eps)
        .map(|(xt, e)| c1 * xt - c2 * e)
        .collect())
}

/// The same posterior as `true_posterior`, parameterized by the noise ε₀
/// that produced x_t instead of by x₀.
pub fn posterior_from_eps(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    eps: &[f64],
) -> Result<PosteriorParams> {
    require_t_ge_2(schedule, t)?;
    Ok(PosteriorParams {
        mean: reverse_mean_from_eps(schedule, x_t, t, eps)?,
        var: schedule.posterior_var(t)?,
    })
}

/// Model reverse posterior: ε_θ(x_t, t) substituted for ε₀.
pub fn model_posterior(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    x_t: &[f64],
    t: usize,
) -> Result<PosteriorParams> {
    require_t_ge_2(schedule, t)?;
    let eps_hat = denoiser::predict_noise(arch, params, x_t, t)?;
    posterior_from_eps(schedule, x_t, t, &eps_hat)
}

/// KL divergence between two reverse-step Gaussians with equal variance:
/// ‖μ_q − μ_p‖²/(2σ²). Errors if the variances disagree.
pub fn kl_posteriors(q: &PosteriorParams, p: &PosteriorParams) -> Result<f64> {
    if q.mean.len() != p.mean.len() {
        return Err(Error::DimMismatch {
            expected: q.mean.len(),
            got: p.mean.len(),
        });
    }
    let tol = 1e-9 * q.var.abs().max(p.var.abs()).max(1e-300);
    if (q.var - p.var).abs() > tol {
        return Err(Error::VarianceMismatch { a: q.var, b: p.var });
    }
    if q.var <= 0.0 || q.var.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "posterior variance must be positive, got {}",
            q.var
        )));
    }
    let sq: f64 = q
        .mean
        .iter()
        .zip(&p.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / (2.0 * q.var))
}

/// Build ‖ε₀ − ε_θ(x_t, t)‖² for one sample on a tape.
pub fn sample_loss_node(
    tape: &mut Tape,
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    x0: &[f64],
    draw: &NoiseDraw,
) -> Result<NodeId> {
    let x_t = forward_noise(schedule, x0, draw.t, &draw.eps)?;
    let eps_hat = denoiser::predict_noise_node(tape, arch, &x_t, draw.t)?;
    let eps = tape.input(&draw.eps)?;
    let r = tape.sub(eps, eps_hat)?;
    Ok(tape.sum_squares(r))
}

/// Denoising loss for a batch under explicit, caller-supplied draws:
/// mean over samples of ‖ε₀ − ε̂‖².
pub fn ddpm_train_loss_with_draws(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    draws: &[NoiseDraw],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != draws.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            got: draws.len(),
        });
    }
    let mut acc = 0.0;
    for (x0, draw) in batch.iter().zip(draws) {
        let v = diffgraph::value_of(params, |tape| {
            sample_loss_node(tape, schedule, arch, x0, draw)
        })?;
        acc += v[0];
    }
    Ok(acc / batch.len() as f64)
}

/// Standard DDPM training loss with internal (t, ε₀) draws — one pair per
/// sample, drawn in batch order from `rng`.
pub fn ddpm_train_loss<R: Rng>(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let draws: Vec<NoiseDraw> = batch
        .iter()
        .map(|x0| draw_noise(rng, schedule.t_steps(), x0.len()))
        .collect();
    ddpm_train_loss_with_draws(schedule, arch, params, batch, &draws)
}

/// Value and parameter gradient of `ddpm_train_loss_with_draws`.
/// Per-sample gradients are computed in parallel and reduced with a
/// sequential fold in batch order, so the result is bit-deterministic.
pub fn ddpm_train_grad_with_draws(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    draws: &[NoiseDraw],
) -> Result<(f64, diffgraph::GradVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != draws.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            got: draws.len(),
        });
    }
    let per_sample: Vec<(f64, diffgraph::GradVector)> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(x0, draw)| {
            diffgraph::grad_of(params, |tape| {
                sample_loss_node(tape, schedule, arch, x0, draw)
            })
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = diffgraph::GradVector::zeros(params.len());
    for (l, g) in &per_sample {
        loss += l;
        grad.add_scaled(g, scale)?;
    }
    Ok((loss * scale, grad))
}

/// Run one reverse chain from x_T ~ N(0, I) down to t = 0.
pub fn sample_chain<R: Rng>(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    rng: &mut R,
) -> Result<DiffusionState> {
    let n = arch.input_dim;
    let mut x: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    for t in (1..=schedule.t_steps()).rev() {
        let eps_hat = denoiser::predict_noise(arch, params, &x, t)?;
        let mut mean = reverse_mean_from_eps(schedule, &x, t, &eps_hat)?;
        if t >= 2 {
            let sd = schedule.posterior_var(t)?.sqrt();
            for m in &mut mean {
                *m += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        x = mean;
    }
    Ok(DiffusionState { x, t: 0 })
}

/// Ancestral sampling of `n_samples` independent chains. Chain i draws
/// from stream i of a ChaCha generator seeded with `seed`, so the output
/// is reproducible and independent of thread scheduling.
pub fn sample(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_chain(schedule, arch, params, &mut rng).map(|s| s.x)
        })
        .collect()
}
