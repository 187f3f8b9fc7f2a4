//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Gradients, ParamStore};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn central_diff_grad<S: Scalar>(
    f: &impl Fn(&ParamStore<S>) -> Result<S>,
    params: &ParamStore<S>,
    step: f64,
) -> Result<BTreeMap<String, Vec<S>>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step} must be > 0")));
    }
    let h = S::of(step);
    let mut out = BTreeMap::new();
    for (name, arr) in params.iter() {
        let mut g = vec![S::zero(); arr.data.len()];
        for i in 0..arr.data.len() {
            let mut p = params.clone();
            let base = p.get(name).unwrap().data[i];
            p.get_mut(name).unwrap().data[i] = base + h;
            let fp = f(&p)?;
            p.get_mut(name).unwrap().data[i] = base - h;
            let fm = f(&p)?;
            g[i] = (fp - fm) / (S::of(2.0) * h);
        }
        out.insert(name.clone(), g);
    }
    Ok(out)
}

/// Compares reverse-mode gradients against central differences and returns
/// the worst relative error over all coordinates. Coordinates whose
/// finite-difference magnitude falls below 1e-8 are compared absolutely.
///
/// `f` must be deterministic under the caller's fixed seeding: the same
/// parameter store must always produce the same scalar.
pub fn finite_diff_check<S: Scalar>(
    f: &impl Fn(&ParamStore<S>) -> Result<S>,
    grad_f: &impl Fn(&ParamStore<S>) -> Result<Gradients<S>>,
    params: &ParamStore<S>,
    step: f64,
) -> Result<f64> {
    let v1 = f(params)?;
    let v2 = f(params)?;
    if v1 != v2 {
        return Err(Error::InvalidArgument(
            "loss function is not deterministic under the given seed".into(),
        ));
    }
    let analytic = grad_f(params)?;
    let numeric = central_diff_grad(f, params, step)?;
    let mut worst = 0.0f64;
    for (name, fd) in &numeric {
        let ad = analytic
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no analytic gradient for '{name}'")))?;
        for (i, (&n, &a)) in fd.iter().zip(ad).enumerate() {
            let n = n.as_f64();
            let a = a.as_f64();
            let err = if n.abs() < 1e-8 {
                (a - n).abs()
            } else {
                (a - n).abs() / n.abs()
            };
            if err > worst {
                worst = err;
            }
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("finite difference at {name}[{i}]")));
            }
        }
    }
    Ok(worst)
}
