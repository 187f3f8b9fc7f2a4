//! Baseline prior constructors: the standard Gaussian and the handcrafted
//! energy-envelope prior, next to the learned prior for head-to-head
//! comparison.

use crate::error::{Error, Result};
use crate::nets::{DiagGaussian, Models};
use crate::scalar::Scalar;

/// Default framing for the energy prior at toy scale.
pub const ENERGY_FRAME_LEN: usize = 32;
pub const ENERGY_HOP: usize = 16;
pub const ENERGY_FLOOR: f64 = 0.1;

/// How the sampler obtains its prior for a given conditioner.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Standard,
    Handcrafted {
        frame_len: usize,
        hop: usize,
        floor: f64,
    },
    Learned,
}

impl PriorSpec {
    pub fn handcrafted_default() -> Self {
        PriorSpec::Handcrafted {
            frame_len: ENERGY_FRAME_LEN,
            hop: ENERGY_HOP,
            floor: ENERGY_FLOOR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Standard => "standard",
            PriorSpec::Handcrafted { .. } => "handcrafted",
            PriorSpec::Learned => "learned",
        }
    }
}

/// Unit-variance prior.
pub fn standard_prior<S: Scalar>(d: usize) -> Result<DiagGaussian<S>> {
    if d == 0 {
        return Err(Error::InvalidArgument("zero-dimensional prior".into()));
    }
    Ok(DiagGaussian::standard(d))
}

/// Data-dependent prior from the normalized frame-level energy of the
/// conditioner: per-frame RMS, max-normalized to (0, 1], floored on the std
/// scale, held piecewise-constant per hop at sample level.
pub fn energy_prior<S: Scalar>(
    y: &[S],
    frame_len: usize,
    hop: usize,
    floor: f64,
) -> Result<DiagGaussian<S>> {
    if !(frame_len >= hop && hop >= 1) {
        return Err(Error::InvalidArgument(format!(
            "frame_len {frame_len} must be >= hop {hop} >= 1"
        )));
    }
    if !(0.0 < floor && floor < 1.0) {
        return Err(Error::InvalidArgument(format!("floor {floor} outside (0, 1)")));
    }
    if y.len() < frame_len {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples shorter than one {frame_len}-sample frame",
            y.len()
        )));
    }
    let mut rms = Vec::new();
    let mut start = 0usize;
    while start + frame_len <= y.len() {
        let pow: f64 = y[start..start + frame_len]
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum();
        rms.push((pow / frame_len as f64).sqrt());
        start += hop;
    }
    let max = rms.iter().fold(0.0f64, |m, &v| m.max(v));
    let stds: Vec<f64> = if max == 0.0 {
        vec![floor; rms.len()]
    } else {
        rms.iter().map(|&v| (v / max).max(floor)).collect()
    };
    let n_frames = stds.len();
    let variances = (0..y.len())
        .map(|i| {
            let f = (i / hop).min(n_frames - 1);
            S::of(stds[f] * stds[f])
        })
        .collect();
    DiagGaussian::new(variances)
}

/// Resolves a prior spec against a conditioner (and, for the learned prior,
/// the trained prior encoder reading from `params`).
pub fn resolve_prior<S: Scalar>(
    spec: &PriorSpec,
    models: &Models<S>,
    params: &crate::autodiff::ParamStore<S>,
    y: &[S],
) -> Result<DiagGaussian<S>> {
    match spec {
        PriorSpec::Standard => standard_prior(y.len()),
        PriorSpec::Handcrafted {
            frame_len,
            hop,
            floor,
        } => energy_prior(y, *frame_len, *hop, *floor),
        PriorSpec::Learned => models.psi()?.encode(params, y),
    }
}
