//! Minimal reverse-mode differentiation over named dense arrays.
//!
//! A [`Tape`] records every primitive as it executes; [`Tape::backward`]
//! replays the record once in reverse topological order (the append order is
//! already topological) and accumulates adjoints. Covariances are plain
//! per-element variance vectors throughout; there is no dense-matrix path.
//!
//! Tapes are single-threaded. Independent tapes on independent threads are
//! fine; parameter stores are read-shared and write-exclusive.

mod check;
mod store;

pub use check::{central_diff_grad, finite_diff_check};
pub use store::{Binding, Gradients, ParamArray, ParamStore};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    id: usize,
}

/// One recorded tensor: shape, forward value, and the rule that produced it.
#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    op: Op<S>,
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    Recip(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Silu(usize),
    Clamp { x: usize, lo: S, hi: S },
    Matmul { a: usize, b: usize },
    Conv1d { x: usize, w: usize, b: Option<usize> },
    Sum(usize),
    Mean(usize),
    Broadcast(usize),
    Concat { xs: Vec<usize> },
    Slice { x: usize, start: usize },
    Reshape(usize),
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Ordered record of primitive operations.
pub struct Tape<S: Scalar> {
    id: u64,
    nodes: Vec<Tensor<S>>,
    names: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::DetachedTape);
        }
        Ok(())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Op<S>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        let id = self.nodes.len();
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            op,
        });
        Ok(Var { tape: self.id, id })
    }

    /// Registers a named differentiable leaf.
    pub fn leaf(&mut self, name: &str, shape: &[usize], data: Vec<S>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::InvalidArgument(format!(
                "leaf '{name}': shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        if self.names.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate leaf '{name}'")));
        }
        let v = self.push(shape.to_vec(), data, true, Op::Leaf)?;
        self.names.insert(name.to_string(), v.id);
        Ok(v)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::InvalidArgument(format!(
                "constant: shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        self.push(shape.to_vec(), data, false, Op::Leaf)
    }

    pub fn scalar(&mut self, v: S) -> Result<Var> {
        self.constant(&[], vec![v])
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.id].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.id].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> S {
        debug_assert_eq!(self.nodes[v.id].data.len(), 1);
        self.nodes[v.id].data[0]
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        if self.nodes[a.id].shape != self.nodes[b.id].shape {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.nodes[a.id].shape.clone(),
                rhs: self.nodes[b.id].shape.clone(),
            });
        }
        let data = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.id].shape.clone();
        let rg = self.rg(a.id) || self.rg(b.id);
        self.push(shape, data, rg, op)
    }

    fn unary_elementwise(
        &mut self,
        x: Var,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        self.check_var(x)?;
        let data = self.nodes[x.id].data.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x.id].shape.clone();
        let rg = self.rg(x.id);
        self.push(shape, data, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        self.unary_elementwise(x, |v| c * v, Op::Scale(x.id, c))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary_elementwise(x, |v| S::one() / v, Op::Recip(x.id))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary_elementwise(x, |v| v.exp(), Op::Exp(x.id))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary_elementwise(x, |v| v.ln(), Op::Log(x.id))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary_elementwise(
            x,
            |v| if v > S::zero() { v } else { S::zero() },
            Op::Relu(x.id),
        )
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary_elementwise(x, |v| v * sigmoid(v), Op::Silu(x.id))
    }

    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("clamp bounds [{lo}, {hi}]")));
        }
        self.unary_elementwise(
            x,
            |v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            },
            Op::Clamp { x: x.id, lo, hi },
        )
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`; the right operand may be a
    /// rank-1 `[k]` vector, producing `[m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let sa = self.nodes[a.id].shape.clone();
        let sb = self.nodes[b.id].shape.clone();
        let (m, k) = match sa.as_slice() {
            [m, k] => (*m, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        let (k2, n, vector_rhs) = match sb.as_slice() {
            [k2, n] => (*k2, *n, false),
            [k2] => (*k2, 1usize, true),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let av = &self.nodes[a.id].data;
        let bv = &self.nodes[b.id].data;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for kk in 0..k {
                let x = av[i * k + kk];
                let brow = &bv[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bq) in orow.iter_mut().zip(brow) {
                    *o += x * bq;
                }
            }
        }
        let shape = if vector_rhs { vec![m] } else { vec![m, n] };
        let rg = self.rg(a.id) || self.rg(b.id);
        self.push(shape, out, rg, Op::Matmul { a: a.id, b: b.id })
    }

    /// 1-D convolution, stride 1, zero padding preserving length. Input
    /// `[Cin, L]`, weight `[Cout, Cin, K]` with odd `K`, optional bias
    /// `[Cout]`, output `[Cout, L]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(w)?;
        if let Some(b) = b {
            self.check_var(b)?;
        }
        let sx = self.nodes[x.id].shape.clone();
        let sw = self.nodes[w.id].shape.clone();
        let (cin, l) = match sx.as_slice() {
            [c, l] => (*c, *l),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: sx,
                    rhs: sw,
                })
            }
        };
        let (cout, cin2, k) = match sw.as_slice() {
            [co, ci, k] => (*co, *ci, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: sx,
                    rhs: sw,
                })
            }
        };
        if cin != cin2 || k % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        if let Some(bv) = b {
            if self.nodes[bv.id].shape != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: vec![cout],
                    rhs: self.nodes[bv.id].shape.clone(),
                });
            }
        }
        let xd = &self.nodes[x.id].data;
        let wd = &self.nodes[w.id].data;
        let bd = b.map(|bv| self.nodes[bv.id].data.as_slice());
        let out = conv1d_forward(xd, wd, bd, cin, cout, l, k);
        let rg = self.rg(x.id) || self.rg(w.id) || b.map(|bv| self.rg(bv.id)).unwrap_or(false);
        self.push(
            vec![cout, l],
            out,
            rg,
            Op::Conv1d {
                x: x.id,
                w: w.id,
                b: b.map(|bv| bv.id),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let s: S = self.nodes[x.id].data.iter().copied().sum();
        let rg = self.rg(x.id);
        self.push(vec![], vec![s], rg, Op::Sum(x.id))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let n = self.nodes[x.id].data.len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let s: S = self.nodes[x.id].data.iter().copied().sum();
        let rg = self.rg(x.id);
        self.push(vec![], vec![s / S::of(n as f64)], rg, Op::Mean(x.id))
    }

    /// Broadcasts a scalar to any shape, or a `[C]` vector to `[C, L]`.
    pub fn broadcast(&mut self, x: Var, target: &[usize]) -> Result<Var> {
        self.check_var(x)?;
        let sx = self.nodes[x.id].shape.clone();
        let n = numel(target);
        let data = match sx.as_slice() {
            [] | [1] => {
                let v = self.nodes[x.id].data[0];
                vec![v; n]
            }
            [c] if target.len() == 2 && target[0] == *c => {
                let l = target[1];
                let mut out = Vec::with_capacity(n);
                for &v in &self.nodes[x.id].data {
                    out.extend(std::iter::repeat(v).take(l));
                }
                out
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: sx,
                    rhs: target.to_vec(),
                })
            }
        };
        let rg = self.rg(x.id);
        self.push(target.to_vec(), data, rg, Op::Broadcast(x.id))
    }

    /// Concatenates along axis 0. Rank-1 operands chain end to end; rank-2
    /// operands stack rows and must share the trailing extent.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() || axis != 0 {
            return Err(Error::InvalidArgument(
                "concat expects operands and axis 0".into(),
            ));
        }
        for &v in xs {
            self.check_var(v)?;
        }
        let rank = self.nodes[xs[0].id].shape.len();
        let mut rows = 0usize;
        let trailing: &[usize] = &self.nodes[xs[0].id].shape[1.min(rank)..];
        for &v in xs {
            let s = &self.nodes[v.id].shape;
            if s.len() != rank || s.is_empty() || &s[1..] != trailing {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.nodes[xs[0].id].shape.clone(),
                    rhs: s.clone(),
                });
            }
            rows += s[0];
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(trailing);
        let mut data = Vec::with_capacity(numel(&shape));
        for &v in xs {
            data.extend_from_slice(&self.nodes[v.id].data);
        }
        let rg = xs.iter().any(|v| self.rg(v.id));
        let ids = xs.iter().map(|v| v.id).collect();
        self.push(shape, data, rg, Op::Concat { xs: ids })
    }

    /// Takes `len` rows starting at `start` along axis 0.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_var(x)?;
        if axis != 0 {
            return Err(Error::InvalidArgument("slice supports axis 0".into()));
        }
        let sx = self.nodes[x.id].shape.clone();
        if sx.is_empty() || start + len > sx[0] {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {}) out of {:?}",
                start + len,
                sx
            )));
        }
        let row: usize = sx[1..].iter().product();
        let data = self.nodes[x.id].data[start * row..(start + len) * row].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&sx[1..]);
        let rg = self.rg(x.id);
        self.push(shape, data, rg, Op::Slice { x: x.id, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check_var(x)?;
        if numel(shape) != self.nodes[x.id].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[x.id].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.nodes[x.id].data.clone();
        let rg = self.rg(x.id);
        self.push(shape.to_vec(), data, rg, Op::Reshape(x.id))
    }

    /// Reverse sweep from a scalar loss. Returns the gradient for every
    /// named leaf; named leaves the loss does not reach get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        self.check_var(loss)?;
        if self.nodes[loss.id].data.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.id].shape.clone()));
        }
        let mut adj: Vec<Option<Vec<S>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![S::one()]);
        for i in (0..=loss.id).rev() {
            if adj[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // keep leaf adjoints for collection
            }
            let g = adj[i].take().expect("adjoint present");
            self.propagate(i, &g, &mut adj);
        }
        let mut grads = BTreeMap::new();
        for (name, &id) in &self.names {
            let len = self.nodes[id].data.len();
            let g = if id <= loss.id {
                adj[id].take().unwrap_or_else(|| vec![S::zero(); len])
            } else {
                vec![S::zero(); len]
            };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
            grads.insert(name.clone(), g);
        }
        Ok(Gradients::new(grads))
    }

    fn propagate(&self, i: usize, g: &[S], adj: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(adj, *a, |dst| axpy(dst, g, S::one()));
                self.acc(adj, *b, |dst| axpy(dst, g, S::one()));
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, |dst| axpy(dst, g, S::one()));
                self.acc(adj, *b, |dst| axpy(dst, g, -S::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].data, &self.nodes[*b].data);
                self.acc(adj, *a, |dst| {
                    for ((d, &gv), &bq) in dst.iter_mut().zip(g).zip(bv) {
                        *d += gv * bq;
                    }
                });
                self.acc(adj, *b, |dst| {
                    for ((d, &gv), &aq) in dst.iter_mut().zip(g).zip(av) {
                        *d += gv * aq;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc(adj, *x, |dst| axpy(dst, g, c));
            }
            Op::Recip(x) => {
                let y = &node.data; // y = 1/x, dy/dx = -y^2
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g).zip(y) {
                        *d -= gv * yv * yv;
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.data;
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                });
            }
            Op::Log(x) => {
                let xv = &self.nodes[*x].data;
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &xq) in dst.iter_mut().zip(g).zip(xv) {
                        *d += gv / xq;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].data;
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &xq) in dst.iter_mut().zip(g).zip(xv) {
                        if xq > S::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Silu(x) => {
                let xv = &self.nodes[*x].data;
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &xq) in dst.iter_mut().zip(g).zip(xv) {
                        let s = sigmoid(xq);
                        *d += gv * s * (S::one() + xq * (S::one() - s));
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let xv = &self.nodes[*x].data;
                self.acc(adj, *x, |dst| {
                    for ((d, &gv), &xq) in dst.iter_mut().zip(g).zip(xv) {
                        if xq >= lo && xq <= hi {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Matmul { a, b } => {
                let sa = &self.nodes[*a].shape;
                let (m, k) = (sa[0], sa[1]);
                let sb = &self.nodes[*b].shape;
                let n = if sb.len() == 2 { sb[1] } else { 1 };
                let av = &self.nodes[*a].data;
                let bv = &self.nodes[*b].data;
                // dA = G B^T
                self.acc(adj, *a, |dst| {
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = S::zero();
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv[kk * n..(kk + 1) * n];
                            for (&gq, &bq) in grow.iter().zip(brow) {
                                acc += gq * bq;
                            }
                            dst[i * k + kk] += acc;
                        }
                    }
                });
                // dB = A^T G
                self.acc(adj, *b, |dst| {
                    for kk in 0..k {
                        for i in 0..m {
                            let aq = av[i * k + kk];
                            let grow = &g[i * n..(i + 1) * n];
                            let drow = &mut dst[kk * n..(kk + 1) * n];
                            for (d, &gq) in drow.iter_mut().zip(grow) {
                                *d += aq * gq;
                            }
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let sx = &self.nodes[*x].shape;
                let sw = &self.nodes[*w].shape;
                let (cin, l) = (sx[0], sx[1]);
                let (cout, k) = (sw[0], sw[2]);
                let xv = &self.nodes[*x].data;
                let wv = &self.nodes[*w].data;
                self.acc(adj, *x, |dst| conv1d_grad_x(dst, g, wv, cin, cout, l, k));
                self.acc(adj, *w, |dst| conv1d_grad_w(dst, g, xv, cin, cout, l, k));
                if let Some(b) = b {
                    self.acc(adj, *b, |dst| {
                        for oc in 0..cout {
                            let mut acc = S::zero();
                            for &gv in &g[oc * l..(oc + 1) * l] {
                                acc += gv;
                            }
                            dst[oc] += acc;
                        }
                    });
                }
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.acc(adj, *x, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Mean(x) => {
                let n = self.nodes[*x].data.len();
                let gv = g[0] / S::of(n as f64);
                self.acc(adj, *x, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Broadcast(x) => {
                let sx = &self.nodes[*x].shape;
                match sx.as_slice() {
                    [] | [1] => {
                        let total: S = g.iter().copied().sum();
                        self.acc(adj, *x, |dst| dst[0] += total);
                    }
                    [c] => {
                        let l = node.data.len() / c;
                        self.acc(adj, *x, |dst| {
                            for (ci, d) in dst.iter_mut().enumerate() {
                                let mut acc = S::zero();
                                for &gv in &g[ci * l..(ci + 1) * l] {
                                    acc += gv;
                                }
                                *d += acc;
                            }
                        });
                    }
                    _ => unreachable!("broadcast source rank checked at record time"),
                }
            }
            Op::Concat { xs } => {
                let mut off = 0usize;
                for &xid in xs {
                    let n = self.nodes[xid].data.len();
                    let gpart = &g[off..off + n];
                    self.acc(adj, xid, |dst| axpy(dst, gpart, S::one()));
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let row: usize = self.nodes[*x].shape[1..].iter().product();
                let off = start * row;
                self.acc(adj, *x, |dst| {
                    axpy(&mut dst[off..off + g.len()], g, S::one())
                });
            }
            Op::Reshape(x) => {
                self.acc(adj, *x, |dst| axpy(dst, g, S::one()));
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Vec<S>>], id: usize, f: impl FnOnce(&mut [S])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let len = self.nodes[id].data.len();
        let dst = adj[id].get_or_insert_with(|| vec![S::zero(); len]);
        f(dst);
    }
}

fn op_name<S>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Recip(..) => "recip",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Relu(..) => "relu",
        Op::Silu(..) => "silu",
        Op::Clamp { .. } => "clamp",
        Op::Matmul { .. } => "matmul",
        Op::Conv1d { .. } => "conv1d",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Broadcast(..) => "broadcast",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape(..) => "reshape",
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[inline]
fn axpy<S: Scalar>(dst: &mut [S], src: &[S], c: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn conv1d_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    b: Option<&[S]>,
    cin: usize,
    cout: usize,
    l: usize,
    k: usize,
) -> Vec<S> {
    let pad = (k / 2) as isize;
    let mut out = vec![S::zero(); cout * l];
    for oc in 0..cout {
        let orow = &mut out[oc * l..(oc + 1) * l];
        if let Some(b) = b {
            let bv = b[oc];
            for o in orow.iter_mut() {
                *o = bv;
            }
        }
        for ic in 0..cin {
            let xrow = &x[ic * l..(ic + 1) * l];
            let wbase = (oc * cin + ic) * k;
            for kk in 0..k {
                let wv = w[wbase + kk];
                let shift = kk as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = (l as isize - shift.max(0)) as usize;
                if hi <= lo {
                    continue;
                }
                let src = &xrow[(lo as isize + shift) as usize..][..hi - lo];
                axpy(&mut orow[lo..hi], src, wv);
            }
        }
    }
    out
}

fn conv1d_grad_x<S: Scalar>(
    dx: &mut [S],
    g: &[S],
    w: &[S],
    cin: usize,
    cout: usize,
    l: usize,
    k: usize,
) {
    let pad = (k / 2) as isize;
    for oc in 0..cout {
        let grow = &g[oc * l..(oc + 1) * l];
        for ic in 0..cin {
            let drow = &mut dx[ic * l..(ic + 1) * l];
            let wbase = (oc * cin + ic) * k;
            for kk in 0..k {
                let wv = w[wbase + kk];
                let shift = kk as isize - pad;
                // out[i] consumed x[i + shift], so dx[j] += w * g[j - shift].
                let lo = shift.max(0) as usize;
                let hi = (l as isize + shift.min(0)) as usize;
                if hi <= lo {
                    continue;
                }
                let src = &grow[(lo as isize - shift) as usize..][..hi - lo];
                axpy(&mut drow[lo..hi], src, wv);
            }
        }
    }
}

fn conv1d_grad_w<S: Scalar>(
    dw: &mut [S],
    g: &[S],
    x: &[S],
    cin: usize,
    cout: usize,
    l: usize,
    k: usize,
) {
    let pad = (k / 2) as isize;
    for oc in 0..cout {
        let grow = &g[oc * l..(oc + 1) * l];
        for ic in 0..cin {
            let xrow = &x[ic * l..(ic + 1) * l];
            let wbase = (oc * cin + ic) * k;
            for kk in 0..k {
                let shift = kk as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = (l as isize - shift.max(0)) as usize;
                if hi <= lo {
                    continue;
                }
                let src = &xrow[(lo as isize + shift) as usize..][..hi - lo];
                let mut acc = S::zero();
                for (&gq, &xq) in grow[lo..hi].iter().zip(src) {
                    acc += gq * xq;
                }
                dw[wbase + kk] += acc;
            }
        }
    }
}

#[cfg(test)]
mod tests;
