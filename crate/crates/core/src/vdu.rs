//! The unlearning objective and its training loops.
//!
//! The loss mixes two terms with γ ∈ [0, 1]:
//!
//! ```text
//! L(θ) = −(1−γ) · Σ_{t∈t_set} κ·w_t · mean_batch ‖ε₀ − ε_θ(√ᾱ_t x₀ + √(1−ᾱ_t) ε₀, t)‖²
//!        +   γ   · Σᵢ (θᵢ − μ*ᵢ)² / (2σ*ᵢ²)
//! ```
//!
//! Term A (the plasticity inducer) is the negated, w_t-weighted denoising
//! error on the forget set: descending it *raises* the model's denoising
//! error there. Term B (the stability regularizer) anchors every
//! parameter to the pre-trained posterior (μ*ᵢ, σ*ᵢ). When t_set is a
//! uniform subsample of {2..T}, κ = (T−1)/|t_set| makes term A an
//! unbiased estimate of the full sum.
//!
//! Term A is unbounded below, so the loop guards against divergence with
//! a NaN/Inf abort, optional gradient-norm clipping, and a small epoch
//! budget. Everything is driven by explicit seeds: identical (seed,
//! config, data) produce a bit-identical θᵘ.

use crate::checkpoints::ParamPosteriorStats;
use crate::denoiser::DenoiserArch;
use crate::diffgraph::{self, GradVector, NodeId, ParamVector, Tape};
use crate::diffusion::{self, NoiseDraw};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

/// How many timesteps of {2..T} each batch uses for term A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "TSubsampleRepr", into = "TSubsampleRepr")]
pub enum TSubsample {
    /// The full sum over t = 2..T (guarded to T ≤ 512).
    #[default]
    All,
    /// A uniform without-replacement subsample of the given size.
    Count(usize),
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(untagged)]
enum TSubsampleRepr {
    Count(u64),
    Keyword(String),
}

impl TryFrom<TSubsampleRepr> for TSubsample {
    type Error = String;
    fn try_from(r: TSubsampleRepr) -> std::result::Result<Self, String> {
        match r {
            TSubsampleRepr::Count(0) => Err("t_subsample must be at least 1".into()),
            TSubsampleRepr::Count(n) => Ok(TSubsample::Count(n as usize)),
            TSubsampleRepr::Keyword(s) if s == "all" => Ok(TSubsample::All),
            TSubsampleRepr::Keyword(s) => Err(format!(
                "t_subsample must be an integer or \"all\", got {s:?}"
            )),
        }
    }
}

impl From<TSubsample> for TSubsampleRepr {
    fn from(v: TSubsample) -> Self {
        match v {
            TSubsample::All => TSubsampleRepr::Keyword("all".into()),
            TSubsample::Count(n) => TSubsampleRepr::Count(n as u64),
        }
    }
}

/// Gradient-norm clipping: a positive threshold or "off".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GradClipRepr", into = "GradClipRepr")]
pub enum GradClip {
    Off,
    Norm(f64),
}

impl Default for GradClip {
    fn default() -> Self {
        GradClip::Norm(10.0)
    }
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(untagged)]
enum GradClipRepr {
    Norm(f64),
    Keyword(String),
}

impl TryFrom<GradClipRepr> for GradClip {
    type Error = String;
    fn try_from(r: GradClipRepr) -> std::result::Result<Self, String> {
        match r {
            GradClipRepr::Norm(v) if v > 0.0 => Ok(GradClip::Norm(v)),
            GradClipRepr::Norm(v) => Err(format!("grad_clip must be positive, got {v}")),
            GradClipRepr::Keyword(s) if s == "off" => Ok(GradClip::Off),
            GradClipRepr::Keyword(s) => {
                Err(format!("grad_clip must be a number or \"off\", got {s:?}"))
            }
        }
    }
}

impl From<GradClip> for GradClipRepr {
    fn from(v: GradClip) -> Self {
        match v {
            GradClip::Off => GradClipRepr::Keyword("off".into()),
            GradClip::Norm(n) => GradClipRepr::Norm(n),
        }
    }
}

/// Hyperparameters of one unlearning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VduConfig {
    pub gamma: f64,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub t_subsample: TSubsample,
    #[serde(default)]
    pub grad_clip: GradClip,
    pub seed: u64,
}

impl VduConfig {
    pub fn validate(&self, t_steps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.eta <= 0.0 || self.eta.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        match self.t_subsample {
            TSubsample::All if t_steps > 512 => Err(Error::InvalidArgument(format!(
                "full sum over t requires T <= 512, got T = {t_steps}; use a t_subsample count"
            ))),
            TSubsample::Count(m) if m > t_steps - 1 => Err(Error::InvalidArgument(format!(
                "t_subsample {m} exceeds the {} usable timesteps",
                t_steps - 1
            ))),
            _ => Ok(()),
        }
    }
}

/// Loss components of one batch or one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VduTerms {
    pub plasticity: f64,
    pub stability: f64,
    pub total: f64,
}

/// Per-epoch trace of an unlearning run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub plasticity: f64,
    pub stability: f64,
    pub total: f64,
    /// ‖θ − μ*‖₂ after the epoch's updates.
    pub dist_to_mu: f64,
}

/// Result of `unlearn`: the sanitized parameters θᵘ plus diagnostics.
#[derive(Debug, Clone)]
pub struct UnlearnRunRecord {
    pub epochs: Vec<EpochTrace>,
    pub params: ParamVector,
    pub wall_clock: Duration,
}

pub const TRACE_CSV_HEADER: &str = "epoch,plasticity,stability,total,dist_to_mu";

/// Serialize the per-epoch trace of a run, one row per epoch, columns as
/// in [`TRACE_CSV_HEADER`]. Wall-clock time stays out on purpose so that
/// identical runs produce identical bytes.
pub fn trace_to_csv(record: &UnlearnRunRecord) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for (i, e) in record.epochs.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            e.plasticity,
            e.stability,
            e.total,
            e.dist_to_mu
        ));
    }
    out
}

/// Adam with the conventional moments (β₁ = 0.9, β₂ = 0.999, ε = 1e−8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(lr: f64, d: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; d],
            v: vec![0.0; d],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &GradVector) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..self.m.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Uniform without-replacement draw of timesteps from {2..T}, returned
/// sorted ascending.
pub fn sample_t_set<R: Rng>(rng: &mut R, t_steps: usize, sub: TSubsample) -> Result<Vec<usize>> {
    if t_steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 timesteps, got {t_steps}"
        )));
    }
    match sub {
        TSubsample::All => Ok((2..=t_steps).collect()),
        TSubsample::Count(m) => {
            if m == 0 || m > t_steps - 1 {
                return Err(Error::InvalidArgument(format!(
                    "t_subsample {m} outside 1..={}",
                    t_steps - 1
                )));
            }
            let mut pool: Vec<usize> = (2..=t_steps).collect();
            for i in 0..m {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut picked = pool[..m].to_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// ε₀ draws for term A: one N(0, I) vector per (sample, t_set entry),
/// drawn sample-major, t ascending.
pub fn draw_plasticity_eps<R: Rng>(
    rng: &mut R,
    n_samples: usize,
    t_count: usize,
    dim: usize,
) -> Vec<Vec<Vec<f64>>> {
    (0..n_samples)
        .map(|_| {
            (0..t_count)
                .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
                .collect()
        })
        .collect()
}

fn validate_t_set(schedule: &NoiseSchedule, t_set: &[usize]) -> Result<()> {
    if t_set.is_empty() {
        return Err(Error::InvalidArgument("empty t_set".into()));
    }
    let t_steps = schedule.t_steps();
    for window in t_set.windows(2) {
        if window[0] >= window[1] {
            return Err(Error::InvalidArgument(
                "t_set must be strictly increasing".into(),
            ));
        }
    }
    if t_set[0] < 2 || *t_set.last().unwrap() > t_steps {
        return Err(Error::InvalidArgument(format!(
            "t_set entries must lie in 2..={t_steps}"
        )));
    }
    Ok(())
}

/// Σ_t w_t·‖ε₀ − ε̂‖² for one sample, as a tape node.
fn plasticity_sample_node(
    tape: &mut Tape,
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    x0: &[f64],
    t_set: &[usize],
    eps_per_t: &[Vec<f64>],
) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (&t, eps) in t_set.iter().zip(eps_per_t) {
        let x_t = diffusion::forward_noise(schedule, x0, t, eps)?;
        let eps_hat = crate::denoiser::predict_noise_node(tape, arch, &x_t, t)?;
        let e = tape.input(eps)?;
        let r = tape.sub(e, eps_hat)?;
        let sq = tape.sum_squares(r);
        let w = tape.scale(sq, schedule.loss_weight(t)?);
        acc = Some(match acc {
            None => w,
            Some(a) => tape.add(a, w)?,
        });
    }
    Ok(acc.expect("t_set validated nonempty"))
}

fn check_plasticity_inputs(
    batch: &[Vec<f64>],
    t_set: &[usize],
    eps: &[Vec<Vec<f64>>],
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    validate_t_set(schedule, t_set)?;
    if eps.len() != batch.len() || eps.iter().any(|e| e.len() != t_set.len()) {
        return Err(Error::InvalidArgument(
            "noise draws must cover every (sample, t) pair".into(),
        ));
    }
    // κ rescales a subsampled t_set into an unbiased full-sum estimate.
    Ok((schedule.t_steps() - 1) as f64 / t_set.len() as f64)
}

/// Term A under explicit noise draws (value only).
pub fn plasticity_value_with_draws(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    t_set: &[usize],
    eps: &[Vec<Vec<f64>>],
) -> Result<f64> {
    let kappa = check_plasticity_inputs(batch, t_set, eps, schedule)?;
    let mut acc = 0.0;
    for (x0, eps_per_t) in batch.iter().zip(eps) {
        let v = diffgraph::value_of(params, |tape| {
            plasticity_sample_node(tape, schedule, arch, x0, t_set, eps_per_t)
        })?;
        acc += v[0];
    }
    Ok(-kappa * acc / batch.len() as f64)
}

/// Term A and its parameter gradient under explicit draws. Per-sample
/// gradients run in parallel; the reduction is a sequential fold in batch
/// order, so results are bit-deterministic.
pub fn plasticity_grad_with_draws(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    t_set: &[usize],
    eps: &[Vec<Vec<f64>>],
) -> Result<(f64, GradVector)> {
    let kappa = check_plasticity_inputs(batch, t_set, eps, schedule)?;
    let per_sample: Vec<(f64, GradVector)> = batch
        .par_iter()
        .zip(eps.par_iter())
        .map(|(x0, eps_per_t)| {
            diffgraph::grad_of(params, |tape| {
                plasticity_sample_node(tape, schedule, arch, x0, t_set, eps_per_t)
            })
        })
        .collect::<Result<_>>()?;
    let scale = -kappa / batch.len() as f64;
    let mut value = 0.0;
    let mut grad = GradVector::zeros(params.len());
    for (v, g) in &per_sample {
        value += v;
        grad.add_scaled(g, scale)?;
    }
    Ok((value * scale, grad))
}

/// Term A with internal ε₀ draws from `rng` (value only).
pub fn plasticity_inducer<R: Rng>(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    t_set: &[usize],
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    validate_t_set(schedule, t_set)?;
    let eps = draw_plasticity_eps(rng, batch.len(), t_set.len(), arch.input_dim);
    plasticity_value_with_draws(schedule, arch, params, batch, t_set, &eps)
}

fn check_stats(params: &ParamVector, stats: &ParamPosteriorStats) -> Result<()> {
    if stats.mu_star.len() != params.len() || stats.sigma_star.len() != params.len() {
        return Err(Error::DimMismatch {
            expected: params.len(),
            got: stats.mu_star.len(),
        });
    }
    Ok(())
}

/// Term B: Σᵢ (θᵢ − μ*ᵢ)²/(2σ*ᵢ²).
pub fn stability_regularizer(params: &ParamVector, stats: &ParamPosteriorStats) -> Result<f64> {
    check_stats(params, stats)?;
    let mut acc = 0.0;
    for i in 0..params.len() {
        let dev = params[i] - stats.mu_star[i];
        let s = stats.sigma_star[i];
        acc += dev * dev / (2.0 * s * s);
    }
    Ok(acc)
}

/// Analytic gradient of term B: (θᵢ − μ*ᵢ)/σ*ᵢ².
pub fn stability_grad(params: &ParamVector, stats: &ParamPosteriorStats) -> Result<GradVector> {
    check_stats(params, stats)?;
    let mut g = GradVector::zeros(params.len());
    for i in 0..params.len() {
        let s = stats.sigma_star[i];
        g[i] = (params[i] - stats.mu_star[i]) / (s * s);
    }
    Ok(g)
}

/// (1−γ)·A + γ·B and its gradient under explicit draws.
#[allow(clippy::too_many_arguments)]
pub fn vdu_grad_with_draws(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    stats: &ParamPosteriorStats,
    gamma: f64,
    t_set: &[usize],
    eps: &[Vec<Vec<f64>>],
) -> Result<(VduTerms, GradVector)> {
    let (a, grad_a) = plasticity_grad_with_draws(schedule, arch, params, batch, t_set, eps)?;
    let b = stability_regularizer(params, stats)?;
    let grad_b = stability_grad(params, stats)?;
    let total = (1.0 - gamma) * a + gamma * b;
    let mut grad = GradVector::zeros(params.len());
    for i in 0..params.len() {
        grad[i] = (1.0 - gamma) * grad_a[i] + gamma * grad_b[i];
    }
    Ok((
        VduTerms {
            plasticity: a,
            stability: b,
            total,
        },
        grad,
    ))
}

/// The full unlearning loss with internal draws seeded by `config.seed`:
/// t_set first, then ε₀ (sample-major, t ascending).
pub fn vdu_loss(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params: &ParamVector,
    batch: &[Vec<f64>],
    stats: &ParamPosteriorStats,
    config: &VduConfig,
) -> Result<f64> {
    config.validate(schedule.t_steps())?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_set = sample_t_set(&mut rng, schedule.t_steps(), config.t_subsample)?;
    let eps = draw_plasticity_eps(&mut rng, batch.len(), t_set.len(), arch.input_dim);
    let a = plasticity_value_with_draws(schedule, arch, params, batch, &t_set, &eps)?;
    let b = stability_regularizer(params, stats)?;
    Ok((1.0 - config.gamma) * a + config.gamma * b)
}

/// Unlearn from θ*: for `config.epochs` epochs, iterate minibatches of
/// the forget set, descend ∇L with Adam, and trace the loss components.
/// Aborts with a diagnostic if the loss or gradient turns non-finite
/// (term A is unbounded below).
pub fn unlearn(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    theta_star: &ParamVector,
    d_f: &[Vec<f64>],
    stats: &ParamPosteriorStats,
    config: &VduConfig,
) -> Result<UnlearnRunRecord> {
    config.validate(schedule.t_steps())?;
    if d_f.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if theta_star.len() != arch.param_count() {
        return Err(Error::DimMismatch {
            expected: arch.param_count(),
            got: theta_star.len(),
        });
    }
    check_stats(theta_star, stats)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = theta_star.clone();
    let mut adam = Adam::new(config.eta, params.len());
    let mut indices: Vec<usize> = (0..d_f.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let (mut sum_a, mut sum_b, mut sum_total) = (0.0, 0.0, 0.0);
        let mut n_batches = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| d_f[i].clone()).collect();
            let t_set = sample_t_set(&mut rng, schedule.t_steps(), config.t_subsample)?;
            let eps = draw_plasticity_eps(&mut rng, batch.len(), t_set.len(), arch.input_dim);
            let (terms, mut grad) = vdu_grad_with_draws(
                schedule,
                arch,
                &params,
                &batch,
                stats,
                config.gamma,
                &t_set,
                &eps,
            )?;
            if !terms.total.is_finite() || !grad.is_finite() {
                return Err(Error::NumericalAbort(format!(
                    "non-finite unlearning loss or gradient at epoch {epoch} \
                     (plasticity {}, stability {})",
                    terms.plasticity, terms.stability
                )));
            }
            if let GradClip::Norm(max_norm) = config.grad_clip {
                let n = grad.norm();
                if n > max_norm {
                    grad.scale_in_place(max_norm / n);
                }
            }
            adam.step(&mut params, &grad)?;
            sum_a += terms.plasticity;
            sum_b += terms.stability;
            sum_total += terms.total;
            n_batches += 1.0;
        }
        let dist: f64 = params
            .iter()
            .zip(&stats.mu_star)
            .map(|(p, m)| (p - m) * (p - m))
            .sum::<f64>()
            .sqrt();
        epochs.push(EpochTrace {
            plasticity: sum_a / n_batches,
            stability: sum_b / n_batches,
            total: sum_total / n_batches,
            dist_to_mu: dist,
        });
    }

    Ok(UnlearnRunRecord {
        epochs,
        params,
        wall_clock: start.elapsed(),
    })
}

/// Hyperparameters for standard denoising training (pre-training and the
/// fine-tuning baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpmTrainConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl DdpmTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || self.eta.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Final parameters and per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub params: ParamVector,
    pub epoch_losses: Vec<f64>,
}

/// Minimize the standard denoising loss with Adam. `on_epoch` runs after
/// each epoch's updates (1-based index) and is the hook for checkpoint
/// snapshots. Zero epochs return the initial parameters untouched.
pub fn train_ddpm<F>(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    params0: ParamVector,
    data: &[Vec<f64>],
    config: &DdpmTrainConfig,
    mut on_epoch: F,
) -> Result<TrainRecord>
where
    F: FnMut(usize, &ParamVector) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if params0.len() != arch.param_count() {
        return Err(Error::DimMismatch {
            expected: arch.param_count(),
            got: params0.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = params0;
    let mut adam = Adam::new(config.eta, params.len());
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let draws: Vec<NoiseDraw> = batch
                .iter()
                .map(|x0| diffusion::draw_noise(&mut rng, schedule.t_steps(), x0.len()))
                .collect();
            let (loss, grad) =
                diffusion::ddpm_train_grad_with_draws(schedule, arch, &params, &batch, &draws)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NumericalAbort(format!(
                    "non-finite training loss or gradient at epoch {epoch}"
                )));
            }
            adam.step(&mut params, &grad)?;
            epoch_loss += loss;
            n_batches += 1.0;
        }
        epoch_losses.push(epoch_loss / n_batches);
        on_epoch(epoch, &params)?;
    }

    Ok(TrainRecord {
        params,
        epoch_losses,
    })
}

/// The reference baseline: continue standard denoising training from θ*
/// on the retain set (typically for a single epoch).
pub fn finetune_with_retain(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    theta_star: &ParamVector,
    d_r: &[Vec<f64>],
    config: &DdpmTrainConfig,
) -> Result<ParamVector> {
    if d_r.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rec = train_ddpm(schedule, arch, theta_star.clone(), d_r, config, |_, _| {
        Ok(())
    })?;
    Ok(rec.params)
}
