//! Diffusion noise schedules and the per-timestep quantities derived from
//! them.
//!
//! A schedule fixes the forward-process variance increments `beta[t]` for
//! `t = 1..=T` and precomputes everything the rest of the pipeline reads:
//! `alpha[t] = 1 - beta[t]`, the cumulative products `alpha_bar[t]`, the
//! exact posterior variances
//! `sigma_q^2(t) = (1 - alpha_t)(1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`,
//! and the per-timestep loss weights
//! `w_t = (1 - alpha_t) / (alpha_t (1 - alpha_bar_{t-1}))`.
//!
//! Timesteps are 1-based at every interface. `posterior_var` and
//! `loss_weight` are only meaningful for `t >= 2`; querying them at `t = 1`
//! returns 0 and nothing downstream ever consumes that slot.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which closed-form family generated a schedule. Serialized into
/// checkpoint headers so a schedule can be reconstructed bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleParams {
    Linear {
        t_steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
    Cosine {
        t_steps: usize,
    },
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match *self {
            ScheduleParams::Linear {
                t_steps,
                beta_start,
                beta_end,
            } => make_linear_schedule(t_steps, beta_start, beta_end),
            ScheduleParams::Cosine { t_steps } => make_cosine_schedule(t_steps),
        }
    }

    pub fn t_steps(&self) -> usize {
        match *self {
            ScheduleParams::Linear { t_steps, .. } => t_steps,
            ScheduleParams::Cosine { t_steps } => t_steps,
        }
    }
}

/// Per-timestep noise schedule quantities, immutable after construction.
///
/// Internally the vectors are 0-indexed; all accessors take the 1-based
/// timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
    loss_weight: Vec<f64>,
}

impl NoiseSchedule {
    fn from_betas(params: ScheduleParams, beta: Vec<f64>) -> Result<Self> {
        let t_steps = beta.len();
        if t_steps < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 timesteps, got {t_steps}"
            )));
        }
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidSchedule(format!(
                    "beta[{}] = {b} outside (0, 1)",
                    i + 1
                )));
            }
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        // t = 1 slots are defined as 0 and never consumed.
        let mut posterior_var = vec![0.0; t_steps];
        let mut loss_weight = vec![0.0; t_steps];
        for i in 1..t_steps {
            let a_t = alpha[i];
            let ab_t = alpha_bar[i];
            let ab_prev = alpha_bar[i - 1];
            posterior_var[i] = (1.0 - a_t) * (1.0 - ab_prev) / (1.0 - ab_t);
            loss_weight[i] = (1.0 - a_t) / (a_t * (1.0 - ab_prev));
        }
        Ok(NoiseSchedule {
            params,
            beta,
            alpha,
            alpha_bar,
            posterior_var,
            loss_weight,
        })
    }

    /// Total number of diffusion steps `T`.
    pub fn t_steps(&self) -> usize {
        self.beta.len()
    }

    /// The parameters this schedule was built from.
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t >= 1 && t <= self.t_steps() {
            Ok(t - 1)
        } else {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.t_steps(),
            })
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check_t(t)?])
    }

    /// Exact reverse-posterior variance `sigma_q^2(t)`. Zero at `t = 1`.
    pub fn posterior_var(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_var[self.check_t(t)?])
    }

    /// Per-timestep loss weight `w_t`. Zero at `t = 1`.
    pub fn loss_weight(&self, t: usize) -> Result<f64> {
        Ok(self.loss_weight[self.check_t(t)?])
    }
}

/// Linearly interpolated `beta` from `beta_start` at `t = 1` to `beta_end`
/// at `t = T`.
pub fn make_linear_schedule(
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_steps < 2 {
        return Err(Error::InvalidSchedule(format!(
            "need at least 2 timesteps, got {t_steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "beta bounds ({beta_start}, {beta_end}) outside (0, 1)"
        )));
    }
    if beta_start > beta_end {
        return Err(Error::InvalidSchedule(format!(
            "beta_start {beta_start} > beta_end {beta_end}"
        )));
    }
    let n = (t_steps - 1) as f64;
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / n)
        .collect();
    NoiseSchedule::from_betas(
        ScheduleParams::Linear {
            t_steps,
            beta_start,
            beta_end,
        },
        beta,
    )
}

/// Cosine `alpha_bar` profile with the usual 0.008 offset; each step's
/// `beta` is recovered from the profile ratio and clipped into (0, 0.999].
///
/// The derived vectors are recomputed from the clipped betas so the
/// product/ratio identities hold exactly.
pub fn make_cosine_schedule(t_steps: usize) -> Result<NoiseSchedule> {
    if t_steps < 2 {
        return Err(Error::InvalidSchedule(format!(
            "need at least 2 timesteps, got {t_steps}"
        )));
    }
    const OFFSET: f64 = 0.008;
    let f = |u: f64| {
        ((u + OFFSET) / (1.0 + OFFSET) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2)
    };
    let f0 = f(0.0);
    let mut beta = Vec::with_capacity(t_steps);
    let mut prev = 1.0;
    for t in 1..=t_steps {
        let ab = f(t as f64 / t_steps as f64) / f0;
        let b = (1.0 - ab / prev).min(0.999);
        beta.push(b);
        prev = ab;
    }
    NoiseSchedule::from_betas(ScheduleParams::Cosine { t_steps }, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_rejects_bad_arguments() {
        assert!(make_linear_schedule(1, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.1, 1.0).is_err());
        assert!(make_linear_schedule(10, 0.3, 0.2).is_err());
    }

    #[test]
    fn constant_two_step_schedule() {
        let b = 0.25;
        let s = make_linear_schedule(2, b, b).unwrap();
        assert_eq!(s.beta(1).unwrap(), b);
        assert_eq!(s.beta(2).unwrap(), b);
        assert_eq!(s.alpha_bar(1).unwrap(), 1.0 - b);
        assert!((s.alpha_bar(2).unwrap() - (1.0 - b) * (1.0 - b)).abs() < 1e-15);
    }

    // Hand computation from the three closed forms: beta = [0.1, 0.2, 0.3]
    // gives alpha = [0.9, 0.8, 0.7], alpha_bar = [0.9, 0.72, 0.504],
    // sigma_q^2(2) = 0.2*0.1/0.28, w_2 = 0.2/(0.8*0.1).
    #[test]
    fn three_step_hand_values() {
        let s = make_linear_schedule(3, 0.1, 0.3).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(s.alpha(1).unwrap(), 0.9));
        assert!(close(s.alpha(2).unwrap(), 0.8));
        assert!(close(s.alpha(3).unwrap(), 0.7));
        assert!(close(s.alpha_bar(1).unwrap(), 0.9));
        assert!(close(s.alpha_bar(2).unwrap(), 0.72));
        assert!(close(s.alpha_bar(3).unwrap(), 0.504));
        assert!((s.posterior_var(2).unwrap() - 0.2 * 0.1 / 0.28).abs() < 1e-12);
        assert!((s.loss_weight(2).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn mnist_configuration_endpoints() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert_eq!(s.beta(1000).unwrap(), 0.02);
        assert!(s.alpha_bar(1000).unwrap() < 1e-2);
        assert!(s.alpha_bar(1000).unwrap() > 0.0);
    }

    #[test]
    fn t1_slots_are_zero_and_readable() {
        let s = make_linear_schedule(5, 0.1, 0.2).unwrap();
        assert_eq!(s.posterior_var(1).unwrap(), 0.0);
        assert_eq!(s.loss_weight(1).unwrap(), 0.0);
        assert!(s.posterior_var(0).is_err());
        assert!(s.loss_weight(6).is_err());
    }

    #[test]
    fn cosine_monotone_and_in_range() {
        for t_steps in [2usize, 100] {
            let s = make_cosine_schedule(t_steps).unwrap();
            for t in 1..=t_steps {
                let ab = s.alpha_bar(t).unwrap();
                assert!(ab > 0.0 && ab < 1.0, "alpha_bar({t}) = {ab}");
                if t >= 2 {
                    assert!(ab < s.alpha_bar(t - 1).unwrap());
                }
            }
        }
        assert!(make_cosine_schedule(1).is_err());
    }

    // Independent reimplementation of the cosine formula, written directly
    // from its definition rather than through NoiseSchedule.
    #[test]
    fn cosine_matches_oracle_reimplementation() {
        let t_steps = 100usize;
        let s = make_cosine_schedule(t_steps).unwrap();
        let f = |u: f64| {
            let y = ((u + 0.008) / 1.008) * std::f64::consts::PI / 2.0;
            y.cos() * y.cos()
        };
        let mut expected = Vec::new();
        for t in 1..=t_steps {
            let ab_t = f(t as f64 / t_steps as f64) / f(0.0);
            let ab_prev = if t == 1 {
                1.0
            } else {
                f((t - 1) as f64 / t_steps as f64) / f(0.0)
            };
            expected.push((1.0 - ab_t / ab_prev).min(0.999));
        }
        for t in 1..=t_steps {
            let got = s.beta(t).unwrap();
            let want = expected[t - 1];
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "beta({t}): got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn construction_is_bit_deterministic() {
        let a = make_linear_schedule(50, 1e-4, 0.2).unwrap();
        let b = make_linear_schedule(50, 1e-4, 0.2).unwrap();
        for t in 1..=50 {
            assert_eq!(
                a.alpha_bar(t).unwrap().to_bits(),
                b.alpha_bar(t).unwrap().to_bits()
            );
            assert_eq!(
                a.posterior_var(t).unwrap().to_bits(),
                b.posterior_var(t).unwrap().to_bits()
            );
        }
        let c = make_cosine_schedule(64).unwrap();
        let d = make_cosine_schedule(64).unwrap();
        for t in 1..=64 {
            assert_eq!(c.beta(t).unwrap().to_bits(), d.beta(t).unwrap().to_bits());
        }
    }

    fn check_identities(s: &NoiseSchedule) {
        for t in 2..=s.t_steps() {
            let a_t = s.alpha(t).unwrap();
            let ab_t = s.alpha_bar(t).unwrap();
            let ab_prev = s.alpha_bar(t - 1).unwrap();
            let pv = s.posterior_var(t).unwrap();
            let w = s.loss_weight(t).unwrap();
            assert!(pv.is_finite() && pv > 0.0);
            assert!(w.is_finite() && w > 0.0);
            // Strictly below beta in exact arithmetic; once alpha_bar
            // underflows the variance ratio rounds to 1 and pv lands on
            // 1−α_t, an ulp or so away from beta itself.
            assert!(pv <= s.beta(t).unwrap() * (1.0 + 1e-12));
            let lhs = pv * (1.0 - ab_t);
            let rhs = (1.0 - a_t) * (1.0 - ab_prev);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
            let lhs2 = w * a_t * (1.0 - ab_prev);
            let rhs2 = 1.0 - a_t;
            assert!((lhs2 - rhs2).abs() <= 1e-12 * rhs2.abs());
        }
        // alpha_bar strictly decreasing, bounded by alpha(1).
        for t in 1..=s.t_steps() {
            let ab = s.alpha_bar(t).unwrap();
            assert!(ab > 0.0 && ab <= s.alpha(1).unwrap());
            if t >= 2 {
                assert!(ab < s.alpha_bar(t - 1).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn linear_identities_hold(t_steps in 2usize..200, b0 in 1e-6f64..0.5, spread in 0.0f64..0.4) {
            let b1 = (b0 + spread).min(0.95);
            let s = make_linear_schedule(t_steps, b0, b1).unwrap();
            check_identities(&s);
        }

        #[test]
        fn cosine_identities_hold(t_steps in 2usize..300) {
            let s = make_cosine_schedule(t_steps).unwrap();
            check_identities(&s);
        }
    }
}
