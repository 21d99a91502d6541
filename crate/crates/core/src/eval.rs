//! Evaluation of unlearned models: classify generated points, score the
//! drop in forget-class generations (PUL), and measure sample quality
//! against retained real data with a Gaussian-fit Fréchet distance.
//!
//! PUL = 100·(count_pre − count_post)/count_pre is the percentage of
//! forget-class generations removed by unlearning. The quality metric
//! fits a Gaussian to each sample set and returns the closed-form
//! Fréchet distance ‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2}); on 2-D data it
//! operates on raw coordinates, standing in for feature-space FID.

use crate::checkpoints::ParamPosteriorStats;
use crate::data::MixtureSpec;
use crate::denoiser::DenoiserArch;
use crate::diffgraph::ParamVector;
use crate::diffusion;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vdu::{self, VduConfig};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Assigns every generated point to the mixture mode with the nearest
/// center (ties broken by the lowest label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    spec: MixtureSpec,
}

impl ClassifierModel {
    pub fn nearest_mode(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ClassifierModel { spec })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }
}

/// Label of the mode whose center is nearest to `x` in Euclidean
/// distance; exact ties go to the lowest label.
pub fn classify(classifier: &ClassifierModel, x: &[f64]) -> Result<u32> {
    if x.len() != 2 {
        return Err(Error::DimMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier input".into()));
    }
    let mut best: Option<(f64, u32)> = None;
    for mode in &classifier.spec.modes {
        let dx = x[0] - mode.center[0];
        let dy = x[1] - mode.center[1];
        let d2 = dx * dx + dy * dy;
        best = match best {
            None => Some((d2, mode.label)),
            Some((bd, bl)) if d2 < bd || (d2 == bd && mode.label < bl) => Some((d2, mode.label)),
            keep => keep,
        };
    }
    Ok(best.expect("validated spec has modes").1)
}

/// Percentage of unlearning: 100·(count_pre − count_post)/count_pre.
/// Negative when unlearning *increased* forget-class generation.
pub fn pul(count_pre: usize, count_post: usize) -> Result<f64> {
    if count_pre == 0 {
        return Err(Error::UndefinedMetric(
            "PUL needs at least one pre-unlearning forget-class generation".into(),
        ));
    }
    Ok(100.0 * (count_pre as f64 - count_post as f64) / count_pre as f64)
}

fn fit_gaussian(samples: &[Vec<f64>], dim: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    let mut mean = DVector::zeros(dim);
    for x in samples {
        if x.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        for (i, v) in x.iter().enumerate() {
            mean[i] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in samples {
        let dev = DVector::from_iterator(dim, x.iter().enumerate().map(|(i, v)| v - mean[i]));
        cov += &dev * dev.transpose();
    }
    cov /= (n - 1) as f64;
    // Ridge the fit so a collapsed sample cloud still has a usable root.
    for i in 0..dim {
        cov[(i, i)] += 1e-6;
    }
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gaussian fit moments".into()));
    }
    Ok((mean, cov))
}

/// Eigenvalues of a symmetric matrix, clipped at zero.
fn clipped_eigenvalues(m: DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::new(m);
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance(
            "eigendecomposition produced non-finite values".into(),
        ));
    }
    Ok(vals)
}

/// Symmetric PSD square root via eigendecomposition with clipping at 0.
fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance(
            "eigendecomposition produced non-finite values".into(),
        ));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Fréchet distance between Gaussian fits of two sample sets:
/// ‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2}). Each set needs at least dim+1
/// samples; both covariances get a 1e−6·I ridge before the root.
pub fn gaussian_frechet(samples_a: &[Vec<f64>], samples_b: &[Vec<f64>]) -> Result<f64> {
    let dim = samples_a
        .first()
        .map(|x| x.len())
        .or_else(|| samples_b.first().map(|x| x.len()))
        .ok_or(Error::EmptyBatch)?;
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional samples".into()));
    }
    for (name, set) in [("first", samples_a), ("second", samples_b)] {
        if set.len() < dim + 1 {
            return Err(Error::InvalidArgument(format!(
                "{name} sample set has {} points; a {dim}-D Gaussian fit needs at least {}",
                set.len(),
                dim + 1
            )));
        }
    }
    let (mu1, cov1) = fit_gaussian(samples_a, dim)?;
    let (mu2, cov2) = fit_gaussian(samples_b, dim)?;

    // Tr((Σ₁Σ₂)^{1/2}) through the symmetric product S·Σ₂·S, S = √Σ₁,
    // which shares its spectrum with Σ₁Σ₂ but stays symmetric PSD.
    let s1 = psd_sqrt(cov1.clone())?;
    let inner = &s1 * &cov2 * &s1;
    let tr_sqrt: f64 = clipped_eigenvalues(inner)?.iter().map(|v| v.sqrt()).sum();

    let mean_term = (&mu1 - &mu2).norm_squared();
    let d = mean_term + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() || d < -1e-9 {
        return Err(Error::DegenerateCovariance(format!(
            "Fréchet distance came out {d}"
        )));
    }
    Ok(d.max(0.0))
}

/// One evaluation row: forget-class counts for both models, PUL, and the
/// quality distance of the unlearned model's retained-class samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gamma: f64,
    pub n_samples: usize,
    pub count_forget_pretrained: usize,
    pub count_forget_unlearned: usize,
    pub pul_percent: f64,
    pub u_fid: f64,
    pub eval_seed: u64,
}

/// Score pre/post sample sets that were already generated. The quality
/// distance compares the post-model's non-forget samples against the
/// retained reference set.
pub fn evaluate_from_samples(
    classifier: &ClassifierModel,
    pre_samples: &[Vec<f64>],
    post_samples: &[Vec<f64>],
    d_r_reference: &[Vec<f64>],
    forget_labels: &[u32],
    gamma: f64,
    eval_seed: u64,
) -> Result<EvalReport> {
    if pre_samples.len() != post_samples.len() || pre_samples.is_empty() {
        return Err(Error::InvalidArgument(
            "pre and post sample sets must be nonempty and equally sized".into(),
        ));
    }
    if forget_labels.is_empty() {
        return Err(Error::InvalidArgument("no forget labels given".into()));
    }
    let is_forget =
        |x: &Vec<f64>| -> Result<bool> { Ok(forget_labels.contains(&classify(classifier, x)?)) };
    let mut count_pre = 0;
    for x in pre_samples {
        if is_forget(x)? {
            count_pre += 1;
        }
    }
    let mut count_post = 0;
    let mut post_retained: Vec<Vec<f64>> = Vec::with_capacity(post_samples.len());
    for x in post_samples {
        if is_forget(x)? {
            count_post += 1;
        } else {
            post_retained.push(x.clone());
        }
    }
    let pul_percent = pul(count_pre, count_post)?;
    let u_fid = gaussian_frechet(&post_retained, d_r_reference)?;
    Ok(EvalReport {
        gamma,
        n_samples: pre_samples.len(),
        count_forget_pretrained: count_pre,
        count_forget_unlearned: count_post,
        pul_percent,
        u_fid,
        eval_seed,
    })
}

/// Sample `n_samples` from the pre-trained and unlearned models with the
/// same seed (paired noise chains) and score them. `d_r_reference` must
/// be held-out real points with the forget labels removed.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_unlearning(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    theta_star: &ParamVector,
    theta_u: &ParamVector,
    classifier: &ClassifierModel,
    d_r_reference: &[Vec<f64>],
    forget_labels: &[u32],
    n_samples: usize,
    seed: u64,
    gamma: f64,
) -> Result<EvalReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    if arch.input_dim != 2 {
        return Err(Error::DimMismatch {
            expected: 2,
            got: arch.input_dim,
        });
    }
    let pre = diffusion::sample(schedule, arch, theta_star, n_samples, seed)?;
    let post = diffusion::sample(schedule, arch, theta_u, n_samples, seed)?;
    evaluate_from_samples(
        classifier,
        &pre,
        &post,
        d_r_reference,
        forget_labels,
        gamma,
        seed,
    )
}

/// Run unlearn + evaluate once per γ against a shared pre-trained model
/// and shared seeds; reports come back in the order of `gammas`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_sweep(
    schedule: &NoiseSchedule,
    arch: &DenoiserArch,
    theta_star: &ParamVector,
    d_f: &[Vec<f64>],
    stats: &ParamPosteriorStats,
    base_config: &VduConfig,
    classifier: &ClassifierModel,
    d_r_reference: &[Vec<f64>],
    forget_labels: &[u32],
    n_samples: usize,
    eval_seed: u64,
    gammas: &[f64],
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut config = base_config.clone();
        config.gamma = gamma;
        let rec = vdu::unlearn(schedule, arch, theta_star, d_f, stats, &config)?;
        reports.push(evaluate_unlearning(
            schedule,
            arch,
            theta_star,
            &rec.params,
            classifier,
            d_r_reference,
            forget_labels,
            n_samples,
            eval_seed,
            gamma,
        )?);
    }
    Ok(reports)
}

pub const REPORT_CSV_HEADER: &str =
    "gamma,n_samples,count_forget_pretrained,count_forget_unlearned,pul_percent,u_fid,eval_seed";

/// Serialize reports to CSV, one row per report, columns as in
/// [`REPORT_CSV_HEADER`]. Floats use Rust's shortest round-trip
/// formatting, so parsing the file recovers them bit-exactly.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.gamma,
            r.n_samples,
            r.count_forget_pretrained,
            r.count_forget_unlearned,
            r.pul_percent,
            r.u_fid,
            r.eval_seed
        ));
    }
    out
}

/// Parse the output of [`reports_to_csv`].
pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "unexpected report CSV header: {other:?}"
            )))
        }
    }
    let mut reports = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!(
                "report CSV row {} has {} fields, want 7",
                idx + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Format(format!("report CSV row {}: bad {what}", idx + 2));
        reports.push(EvalReport {
            gamma: fields[0].parse().map_err(|_| bad("gamma"))?,
            n_samples: fields[1].parse().map_err(|_| bad("n_samples"))?,
            count_forget_pretrained: fields[2]
                .parse()
                .map_err(|_| bad("count_forget_pretrained"))?,
            count_forget_unlearned: fields[3]
                .parse()
                .map_err(|_| bad("count_forget_unlearned"))?,
            pul_percent: fields[4].parse().map_err(|_| bad("pul_percent"))?,
            u_fid: fields[5].parse().map_err(|_| bad("u_fid"))?,
            eval_seed: fields[6].parse().map_err(|_| bad("eval_seed"))?,
        });
    }
    Ok(reports)
}
