//! The three learnable modules: conditional noise estimator, prior encoder
//! and posterior encoder, instantiated at desk scale.
//!
//! Networks are architecture descriptors; their parameters live in a shared
//! [`ParamStore`] under the prefixes `theta.`, `psi.` and `phi.`, so one
//! optimizer state and one checkpoint cover whichever modules a training
//! mode instantiates.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::scalar::Scalar;

/// Pre-activation clamp bounds for variance heads.
const VAR_PREACT_LO: f64 = -30.0;
const VAR_PREACT_HI: f64 = 30.0;

/// Zero-mean Gaussian with per-element variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<S> {
    variances: Vec<S>,
}

impl<S: Scalar> DiagGaussian<S> {
    pub fn new(variances: Vec<S>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::InvalidArgument("empty variance vector".into()));
        }
        if !variances.iter().all(|v| v.is_finite() && *v > S::zero()) {
            return Err(Error::InvalidArgument(
                "variances must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { variances })
    }

    /// Unit variances.
    pub fn standard(d: usize) -> Self {
        Self {
            variances: vec![S::one(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[S] {
        &self.variances
    }

    pub fn stds(&self) -> Vec<S> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    /// Sum of log variances.
    pub fn log_det(&self) -> S {
        self.variances.iter().map(|v| v.ln()).sum()
    }

    /// Reparameterized draw sigma * u with u standard normal.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<S> {
        self.variances
            .iter()
            .map(|v| {
                let u: f64 = StandardNormal.sample(rng);
                v.sqrt() * S::of(u)
            })
            .collect()
    }
}

/// Sinusoidal embedding of a continuous timestep; frequencies run
/// geometrically from 1 to 1e4 over half the dimensions.
pub fn time_embedding(t_hat: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut emb = Vec::with_capacity(dim);
    for i in 0..half {
        let expo = if half == 1 {
            0.0
        } else {
            4.0 * i as f64 / (half - 1) as f64
        };
        emb.push((t_hat * 10f64.powf(expo)).sin());
    }
    for i in 0..half {
        let expo = if half == 1 {
            0.0
        } else {
            4.0 * i as f64 / (half - 1) as f64
        };
        emb.push((t_hat * 10f64.powf(expo)).cos());
    }
    emb
}

/// Truncated-normal weights (std 0.02, resampled beyond two sigma).
fn init_weights<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| {
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    return S::of(0.02 * z);
                }
            }
        })
        .collect()
}

fn conv_w_shape(cout: usize, cin: usize, k: usize) -> Vec<usize> {
    vec![cout, cin, k]
}

/// Conditional noise estimator: a small residual 1-D convolutional network
/// over concat(x_t, y) with a sinusoidal time embedding added per channel
/// after a learned projection. The output head is zero-initialized, so the
/// untrained estimator predicts exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimator {
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub time_dim: usize,
}

impl Default for NoiseEstimator {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 4,
            kernel: 3,
            time_dim: 64,
        }
    }
}

impl NoiseEstimator {
    pub const PREFIX: &'static str = "theta";

    /// Tiny preset for gradient-check runs.
    pub fn tiny() -> Self {
        Self {
            channels: 4,
            blocks: 1,
            kernel: 3,
            time_dim: 8,
        }
    }

    pub fn init_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let c = self.channels;
        let k = self.kernel;
        let p = Self::PREFIX;
        store.insert(
            &format!("{p}.in.w"),
            &conv_w_shape(c, 2, k),
            init_weights(rng, c * 2 * k),
        )?;
        store.insert(&format!("{p}.in.b"), &[c], vec![S::zero(); c])?;
        store.insert(
            &format!("{p}.time.w"),
            &[c, self.time_dim],
            init_weights(rng, c * self.time_dim),
        )?;
        store.insert(&format!("{p}.time.b"), &[c], vec![S::zero(); c])?;
        for blk in 0..self.blocks {
            for conv in ["a", "b"] {
                store.insert(
                    &format!("{p}.block{blk}.{conv}.w"),
                    &conv_w_shape(c, c, k),
                    init_weights(rng, c * c * k),
                )?;
                store.insert(&format!("{p}.block{blk}.{conv}.b"), &[c], vec![S::zero(); c])?;
            }
        }
        store.insert(
            &format!("{p}.head.w"),
            &conv_w_shape(1, c, 1),
            vec![S::zero(); c],
        )?;
        store.insert(&format!("{p}.head.b"), &[1], vec![S::zero()])?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let k = self.kernel;
        let conv_in = c * 2 * k + c;
        let time = c * self.time_dim + c;
        let blocks = self.blocks * 2 * (c * c * k + c);
        let head = c + 1;
        conv_in + time + blocks + head
    }

    /// Estimates the noise from `(x_t, y, t_hat)` on the given tape.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bind: &Binding,
        x_t: Var,
        y: Var,
        t_hat: f64,
    ) -> Result<Var> {
        let p = Self::PREFIX;
        let l = match tape.shape(x_t) {
            [l] => *l,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "estimate_noise",
                    lhs: other.to_vec(),
                    rhs: vec![0],
                })
            }
        };
        if tape.shape(y) != [l] {
            return Err(Error::ShapeMismatch {
                op: "estimate_noise",
                lhs: vec![l],
                rhs: tape.shape(y).to_vec(),
            });
        }
        if !t_hat.is_finite() {
            return Err(Error::InvalidArgument(format!("t_hat = {t_hat}")));
        }
        let c = self.channels;
        let xr = tape.reshape(x_t, &[1, l])?;
        let yr = tape.reshape(y, &[1, l])?;
        let input = tape.concat(&[xr, yr], 0)?;
        let mut h = tape.conv1d(input, bind.var(&format!("{p}.in.w"))?, Some(bind.var(&format!("{p}.in.b"))?))?;

        let emb: Vec<S> = time_embedding(t_hat, self.time_dim)
            .into_iter()
            .map(S::of)
            .collect();
        let emb = tape.constant(&[self.time_dim], emb)?;
        let tw = tape.matmul(bind.var(&format!("{p}.time.w"))?, emb)?;
        let tproj = tape.add(tw, bind.var(&format!("{p}.time.b"))?)?;
        let tmap = tape.broadcast(tproj, &[c, l])?;
        h = tape.add(h, tmap)?;

        for blk in 0..self.blocks {
            let u = tape.silu(h)?;
            let u = tape.conv1d(
                u,
                bind.var(&format!("{p}.block{blk}.a.w"))?,
                Some(bind.var(&format!("{p}.block{blk}.a.b"))?),
            )?;
            let u = tape.silu(u)?;
            let u = tape.conv1d(
                u,
                bind.var(&format!("{p}.block{blk}.b.w"))?,
                Some(bind.var(&format!("{p}.block{blk}.b.b"))?),
            )?;
            h = tape.add(h, u)?;
        }
        let out = tape.conv1d(
            h,
            bind.var(&format!("{p}.head.w"))?,
            Some(bind.var(&format!("{p}.head.b"))?),
        )?;
        tape.reshape(out, &[l])
    }
}

/// Variance vectors produced on a tape: std and var handles.
#[derive(Debug, Clone, Copy)]
pub struct EncodedGaussian {
    pub std: Var,
    pub var: Var,
}

/// Shared body of the two variance encoders: a small residual 1-D conv net
/// whose head emits a pre-activation `v`; the output standard deviation is
/// `exp(v) + sigma_min` (the floor is added on the std scale), and the
/// variance is its square.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEncoder {
    prefix: &'static str,
    pub in_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub sigma_min: f64,
}

impl VarianceEncoder {
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let k = self.kernel;
        let conv_in = c * self.in_channels * k + c;
        let blocks = self.blocks * 2 * (c * c * k + c);
        let head = c + 1;
        conv_in + blocks + head
    }

    pub fn init_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let c = self.channels;
        let k = self.kernel;
        let p = self.prefix;
        store.insert(
            &format!("{p}.in.w"),
            &conv_w_shape(c, self.in_channels, k),
            init_weights(rng, c * self.in_channels * k),
        )?;
        store.insert(&format!("{p}.in.b"), &[c], vec![S::zero(); c])?;
        for blk in 0..self.blocks {
            for conv in ["a", "b"] {
                store.insert(
                    &format!("{p}.block{blk}.{conv}.w"),
                    &conv_w_shape(c, c, k),
                    init_weights(rng, c * c * k),
                )?;
                store.insert(&format!("{p}.block{blk}.{conv}.b"), &[c], vec![S::zero(); c])?;
            }
        }
        store.insert(
            &format!("{p}.head.w"),
            &conv_w_shape(1, c, 1),
            vec![S::zero(); c],
        )?;
        store.insert(&format!("{p}.head.b"), &[1], vec![S::zero()])?;
        Ok(())
    }

    fn forward_std<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bind: &Binding,
        inputs: &[Var],
    ) -> Result<EncodedGaussian> {
        let p = self.prefix;
        let l = tape.shape(inputs[0]).iter().product::<usize>();
        let mut rows = Vec::with_capacity(inputs.len());
        for &v in inputs {
            if tape.value(v).len() != l {
                return Err(Error::ShapeMismatch {
                    op: "encode",
                    lhs: vec![l],
                    rhs: tape.shape(v).to_vec(),
                });
            }
            rows.push(tape.reshape(v, &[1, l])?);
        }
        let input = tape.concat(&rows, 0)?;
        let mut h = tape.conv1d(
            input,
            bind.var(&format!("{p}.in.w"))?,
            Some(bind.var(&format!("{p}.in.b"))?),
        )?;
        for blk in 0..self.blocks {
            let u = tape.silu(h)?;
            let u = tape.conv1d(
                u,
                bind.var(&format!("{p}.block{blk}.a.w"))?,
                Some(bind.var(&format!("{p}.block{blk}.a.b"))?),
            )?;
            let u = tape.silu(u)?;
            let u = tape.conv1d(
                u,
                bind.var(&format!("{p}.block{blk}.b.w"))?,
                Some(bind.var(&format!("{p}.block{blk}.b.b"))?),
            )?;
            h = tape.add(h, u)?;
        }
        let pre = tape.conv1d(
            h,
            bind.var(&format!("{p}.head.w"))?,
            Some(bind.var(&format!("{p}.head.b"))?),
        )?;
        let pre = tape.reshape(pre, &[l])?;
        let pre = tape.clamp(pre, S::of(VAR_PREACT_LO), S::of(VAR_PREACT_HI))?;
        let ex = tape.exp(pre)?;
        let floor = tape.scalar(S::of(self.sigma_min))?;
        let floor = tape.broadcast(floor, &[l])?;
        let std = tape.add(ex, floor)?;
        let var = tape.mul(std, std)?;
        Ok(EncodedGaussian { std, var })
    }
}

/// Prior encoder over the degraded signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorNet(pub VarianceEncoder);

impl PriorNet {
    pub const PREFIX: &'static str = "psi";

    pub fn new(channels: usize, blocks: usize, kernel: usize, sigma_min: f64) -> Self {
        Self(VarianceEncoder {
            prefix: Self::PREFIX,
            in_channels: 1,
            channels,
            blocks,
            kernel,
            sigma_min,
        })
    }

    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.0.init_params(store, rng)
    }

    pub fn param_count(&self) -> usize {
        self.0.param_count()
    }

    pub fn encode_on_tape<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bind: &Binding,
        y: Var,
    ) -> Result<EncodedGaussian> {
        self.0.forward_std(tape, bind, &[y])
    }

    /// Plain evaluation into a [`DiagGaussian`].
    pub fn encode<S: Scalar>(&self, params: &ParamStore<S>, y: &[S]) -> Result<DiagGaussian<S>> {
        let mut tape = Tape::new();
        let bind = tape.bind_store(params)?;
        let yv = tape.constant(&[y.len()], y.to_vec())?;
        let enc = self.encode_on_tape(&mut tape, &bind, yv)?;
        DiagGaussian::new(tape.value(enc.var).to_vec())
    }
}

/// Posterior encoder over the clean/degraded pair, concatenated along the
/// channel dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorNet(pub VarianceEncoder);

impl PosteriorNet {
    pub const PREFIX: &'static str = "phi";

    pub fn new(channels: usize, blocks: usize, kernel: usize, sigma_min: f64) -> Self {
        Self(VarianceEncoder {
            prefix: Self::PREFIX,
            in_channels: 2,
            channels,
            blocks,
            kernel,
            sigma_min,
        })
    }

    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.0.init_params(store, rng)
    }

    pub fn param_count(&self) -> usize {
        self.0.param_count()
    }

    pub fn encode_on_tape<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bind: &Binding,
        x0: Var,
        y: Var,
    ) -> Result<EncodedGaussian> {
        self.0.forward_std(tape, bind, &[x0, y])
    }

    pub fn encode<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        x0: &[S],
        y: &[S],
    ) -> Result<DiagGaussian<S>> {
        let mut tape = Tape::new();
        let bind = tape.bind_store(params)?;
        let xv = tape.constant(&[x0.len()], x0.to_vec())?;
        let yv = tape.constant(&[y.len()], y.to_vec())?;
        let enc = self.encode_on_tape(&mut tape, &bind, xv, yv)?;
        DiagGaussian::new(tape.value(enc.var).to_vec())
    }
}

/// Architecture bundle plus the shared parameter store. Which encoders exist
/// depends on the training mode.
#[derive(Debug, Clone)]
pub struct Models<S: Scalar> {
    pub theta: NoiseEstimator,
    pub psi: Option<PriorNet>,
    pub phi: Option<PosteriorNet>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Models<S> {
    pub fn psi(&self) -> Result<&PriorNet> {
        self.psi
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no prior encoder in this model".into()))
    }

    pub fn phi(&self) -> Result<&PosteriorNet> {
        self.phi
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no posterior encoder in this model".into()))
    }

    /// Plain (non-tape) noise estimate, used by the sampler.
    pub fn estimate_noise(
        &self,
        params: &ParamStore<S>,
        x_t: &[S],
        y: &[S],
        t_hat: f64,
    ) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let bind = tape.bind_store(params)?;
        let xv = tape.constant(&[x_t.len()], x_t.to_vec())?;
        let yv = tape.constant(&[y.len()], y.to_vec())?;
        let out = self.theta.forward(&mut tape, &bind, xv, yv, t_hat)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Draws a reparameterized sample from a diagonal Gaussian, outside any tape.
pub fn sample_diag<S: Scalar>(g: &DiagGaussian<S>, rng: &mut ChaCha8Rng) -> Vec<S> {
    g.sample(rng)
}

/// Standard-normal draw helper shared by loss builders.
pub fn standard_normal_vec<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    normal_vec(rng, n)
}
