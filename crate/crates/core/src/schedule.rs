//! Diffusion variance schedules and every closed-form per-timestep quantity
//! used by training, sampling and the exact bound.
//!
//! All schedule math stays in f64 regardless of the model precision: the
//! cumulative products of fifty near-one factors lose digits in f32.
//! Timesteps are 1-based throughout (`t = 1..=T`), with the convention
//! `alpha_bar(0) = 1`, which forces the first posterior variance to zero.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-timestep diffusion constants, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    post_vars: Vec<f64>,
    gammas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced variance increments from `beta_min` at t=1 to
    /// `beta_max` at t=T.
    pub fn linear(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Schedule("T must be at least 1".into()));
        }
        if !beta_min.is_finite() || !beta_max.is_finite() {
            return Err(Error::Schedule("non-finite schedule endpoints".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Schedule(format!(
                "endpoints must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        if t_steps == 1 && beta_min != beta_max {
            return Err(Error::Schedule(
                "T = 1 requires beta_min == beta_max".into(),
            ));
        }
        let betas = if t_steps == 1 {
            vec![beta_min]
        } else {
            let span = beta_max - beta_min;
            let denom = (t_steps - 1) as f64;
            (0..t_steps)
                .map(|i| beta_min + span * i as f64 / denom)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Builds all derived vectors from an explicit beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("empty beta sequence".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !b.is_finite() || !(0.0 < b && b < 1.0) {
                return Err(Error::Schedule(format!(
                    "beta[{}] = {b} outside (0, 1)",
                    i + 1
                )));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        // sigma~_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t, abar_0 = 1,
        // so the t = 1 entry is exactly zero.
        let mut post_vars = Vec::with_capacity(betas.len());
        let mut gammas = Vec::with_capacity(betas.len());
        for i in 0..betas.len() {
            let abar_prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
            let pv = (1.0 - abar_prev) / (1.0 - alpha_bars[i]) * betas[i];
            post_vars.push(pv);
            let g = if i == 0 {
                1.0 / (2.0 * alphas[0])
            } else {
                betas[i] * betas[i] / (2.0 * pv * alphas[i] * (1.0 - alpha_bars[i]))
            };
            gammas.push(g);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            post_vars,
            gammas,
        })
    }

    /// Number of diffusion steps T.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-process (forward posterior) variance sigma~_t^2.
    pub fn post_var(&self, t: usize) -> f64 {
        self.post_vars[t - 1]
    }

    /// Bound weighting factor gamma_t.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Direct forward sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
    pub fn forward_sample<S: Scalar>(&self, x0: &[S], eps: &[S], t: usize) -> Result<Vec<S>> {
        if x0.len() != eps.len() {
            return Err(Error::ShapeMismatch {
                op: "forward_sample",
                lhs: vec![x0.len()],
                rhs: vec![eps.len()],
            });
        }
        self.check_t(t)?;
        let abar = self.alpha_bar(t);
        let c0 = S::of(abar.sqrt());
        let c1 = S::of((1.0 - abar).sqrt());
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(&x, &e)| c0 * x + c1 * e)
            .collect())
    }
}

/// A short inference schedule together with the continuous timestep each of
/// its steps maps to on the training schedule (the time-embedding input).
#[derive(Debug, Clone)]
pub struct InferenceSchedule {
    pub sched: NoiseSchedule,
    pub t_hat: Vec<f64>,
}

/// Aligns a short beta sequence against the training schedule by locating
/// each sqrt(abar_infer) between adjacent training sqrt(abar) values.
pub fn inference_schedule(
    train: &NoiseSchedule,
    betas_infer: &[f64],
) -> Result<InferenceSchedule> {
    if betas_infer.is_empty() {
        return Err(Error::Alignment("empty inference schedule".into()));
    }
    if betas_infer.len() > train.len() {
        return Err(Error::Alignment(format!(
            "{} inference steps exceed the {} training steps",
            betas_infer.len(),
            train.len()
        )));
    }
    let sched = NoiseSchedule::from_betas(betas_infer.to_vec())?;
    let t_max = train.len();
    let mut t_hat = Vec::with_capacity(sched.len());
    for s in 1..=sched.len() {
        let ab = sched.alpha_bar(s);
        if ab > train.alpha_bar(1) || ab < train.alpha_bar(t_max) {
            return Err(Error::Alignment(format!(
                "abar_infer[{s}] = {ab} outside [{}, {}]",
                train.alpha_bar(t_max),
                train.alpha_bar(1)
            )));
        }
        let mut found = None;
        for t in 1..t_max {
            let hi = train.alpha_bar(t);
            let lo = train.alpha_bar(t + 1);
            if lo <= ab && ab <= hi {
                let num = hi.sqrt() - ab.sqrt();
                let den = hi.sqrt() - lo.sqrt();
                found = Some(t as f64 + num / den);
                break;
            }
        }
        match found {
            Some(v) => t_hat.push(v),
            None => {
                return Err(Error::Alignment(format!(
                    "no bracketing training step for abar_infer[{s}] = {ab}"
                )))
            }
        }
    }
    Ok(InferenceSchedule { sched, t_hat })
}

/// Identity alignment for running the full training schedule at inference.
pub fn full_schedule(train: &NoiseSchedule) -> InferenceSchedule {
    InferenceSchedule {
        sched: train.clone(),
        t_hat: (1..=train.len()).map(|t| t as f64).collect(),
    }
}

/// 6-step inference betas used as the default fast sampling scheme.
pub const INFER_BETAS_6: [f64; 6] = [1e-4, 1e-3, 0.01, 0.05, 0.2, 0.35];

/// 3-step inference betas, a subset of the 6-step scheme.
pub const INFER_BETAS_3: [f64; 3] = [0.05, 0.2, 0.35];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream, StreamKind};

    // Product of (1 - beta_t) over the 50-step linear [1e-4, 0.035] schedule,
    // evaluated ahead of time at 60-digit precision.
    const ALPHA_BAR_50_ORACLE: f64 = 0.4114663979618452553386861;

    fn default_sched() -> NoiseSchedule {
        NoiseSchedule::linear(50, 1e-4, 0.035).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = default_sched();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(50), 0.035);
        let inc = s.beta(2) - s.beta(1);
        for t in 2..=50 {
            assert!((s.beta(t) - s.beta(t - 1) - inc).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_bar_matches_precomputed_product() {
        let s = default_sched();
        assert!((s.alpha_bar(50) - ALPHA_BAR_50_ORACLE).abs() < 1e-12);
    }

    #[test]
    fn single_step_degenerate_case() {
        let b = 0.3;
        let s = NoiseSchedule::linear(1, b, b).unwrap();
        assert_eq!(s.betas(), &[b]);
        assert_eq!(s.alpha_bar(1), 1.0 - b);
        assert_eq!(s.post_var(1), 0.0);
        assert!((s.gamma(1) - 1.0 / (2.0 * (1.0 - b))).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_endpoints() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.035).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.035).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, f64::NAN, 0.1).is_err());
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
    }

    #[test]
    fn first_posterior_variance_is_exactly_zero() {
        let s = default_sched();
        assert_eq!(s.post_var(1), 0.0);
    }

    #[test]
    fn telescoping_identity() {
        let s = default_sched();
        for t in 2..=s.len() {
            let lhs = 1.0 - s.alpha_bar(t);
            let rhs = s.alpha(t) * (1.0 - s.alpha_bar(t - 1)) + s.beta(t);
            assert!((lhs - rhs).abs() < 1e-12, "t = {t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn derived_quantities_recompute_from_betas() {
        // Independent recomputation straight from the beta sequence.
        let s = default_sched();
        let betas = s.betas().to_vec();
        let mut abar = 1.0f64;
        let mut abars = Vec::new();
        for &b in &betas {
            abar *= 1.0 - b;
            abars.push(abar);
        }
        for t in 1..=betas.len() {
            let prev = if t == 1 { 1.0 } else { abars[t - 2] };
            let pv = (1.0 - prev) / (1.0 - abars[t - 1]) * betas[t - 1];
            let g = if t == 1 {
                1.0 / (2.0 * (1.0 - betas[0]))
            } else {
                betas[t - 1].powi(2) / (2.0 * pv * (1.0 - betas[t - 1]) * (1.0 - abars[t - 1]))
            };
            assert!((s.post_var(t) - pv).abs() < 1e-12);
            assert!((s.gamma(t) - g).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = default_sched();
        assert!(s.alpha_bar(1) < 1.0);
        assert!(s.alpha_bar(s.len()) > 0.0);
        for t in 2..=s.len() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn forward_sample_zero_cases() {
        let s = default_sched();
        let x0 = vec![1.0f64, -2.0, 0.5];
        let zeros = vec![0.0f64; 3];
        let t = 10;
        let xt = s.forward_sample(&x0, &zeros, t).unwrap();
        let c = s.alpha_bar(t).sqrt();
        for (a, b) in xt.iter().zip(&x0) {
            assert!((a - c * b).abs() < 1e-15);
        }
        let eps = vec![0.3f64, 0.1, -0.7];
        let xt = s.forward_sample(&zeros, &eps, t).unwrap();
        let c = (1.0 - s.alpha_bar(t)).sqrt();
        for (a, b) in xt.iter().zip(&eps) {
            assert!((a - c * b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_sample_is_linear() {
        let s = default_sched();
        let mut rng = stream(3, StreamKind::MonteCarlo, 0, 0);
        let d = 16;
        let x0: Vec<f64> = normal_vec(&mut rng, d);
        let x1: Vec<f64> = normal_vec(&mut rng, d);
        let e0: Vec<f64> = normal_vec(&mut rng, d);
        let e1: Vec<f64> = normal_vec(&mut rng, d);
        let (a, b) = (0.7, -1.3);
        let mix_x: Vec<f64> = x0.iter().zip(&x1).map(|(p, q)| a * p + b * q).collect();
        let mix_e: Vec<f64> = e0.iter().zip(&e1).map(|(p, q)| a * p + b * q).collect();
        let lhs = s.forward_sample(&mix_x, &mix_e, 25).unwrap();
        let f0 = s.forward_sample(&x0, &e0, 25).unwrap();
        let f1 = s.forward_sample(&x1, &e1, 25).unwrap();
        for i in 0..d {
            assert!((lhs[i] - (a * f0[i] + b * f1[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_sample_errors() {
        let s = default_sched();
        let x0 = vec![0.0f64; 4];
        let eps = vec![0.0f64; 3];
        assert!(s.forward_sample(&x0, &eps, 5).is_err());
        let eps = vec![0.0f64; 4];
        assert!(s.forward_sample(&x0, &eps, 0).is_err());
        assert!(s.forward_sample(&x0, &eps, 51).is_err());
    }

    #[test]
    fn paper_inference_schedules_align() {
        let train = default_sched();
        let six = inference_schedule(&train, &INFER_BETAS_6).unwrap();
        assert_eq!(six.sched.len(), 6);
        assert_eq!(six.t_hat.len(), 6);
        for w in six.t_hat.windows(2) {
            assert!(w[0] < w[1]);
        }
        let three = inference_schedule(&train, &INFER_BETAS_3).unwrap();
        assert_eq!(three.sched.len(), 3);
        for &th in &three.t_hat {
            assert!((1.0..=50.0).contains(&th));
        }
    }

    #[test]
    fn self_alignment_is_exact() {
        let train = default_sched();
        let infer = inference_schedule(&train, train.betas()).unwrap();
        for (s, &th) in infer.t_hat.iter().enumerate() {
            assert_eq!(th, (s + 1) as f64);
        }
    }

    #[test]
    fn rejects_out_of_range_alignment() {
        let train = default_sched();
        // abar = 0.1 lies below the training abar_T ~ 0.41.
        assert!(inference_schedule(&train, &[0.9]).is_err());
        assert!(inference_schedule(&train, &vec![0.01; 51]).is_err());
    }
}
