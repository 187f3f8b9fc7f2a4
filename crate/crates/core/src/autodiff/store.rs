//! Named dense parameter arrays and their gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Var};

/// One named array: shape plus flat data.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Ordered map of named parameter arrays. Iteration order is the name order,
/// which keeps updates, checkpoints and gradient reductions deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S: Scalar> {
    entries: BTreeMap<String, ParamArray<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<S>) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "param '{name}': shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("param '{name}'")));
        }
        self.entries.insert(
            name.to_string(),
            ParamArray {
                shape: shape.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray<S>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamArray<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamArray<S>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters, optionally restricted to a prefix.
    pub fn param_count(&self, prefix: Option<&str>) -> usize {
        self.entries
            .iter()
            .filter(|(name, _)| prefix.map(|p| name.starts_with(p)).unwrap_or(true))
            .map(|(_, a)| a.data.len())
            .sum()
    }

    /// Like-for-like map into another store (same names and shapes).
    pub fn map_values(&self, mut f: impl FnMut(&str, &[S]) -> Vec<S>) -> Result<Self> {
        let mut out = Self::new();
        for (name, arr) in &self.entries {
            let data = f(name, &arr.data);
            out.insert(name, &arr.shape, data)?;
        }
        Ok(out)
    }

    /// Zero store with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, arr) in &self.entries {
            out.entries.insert(
                name.clone(),
                ParamArray {
                    shape: arr.shape.clone(),
                    data: vec![S::zero(); arr.data.len()],
                },
            );
        }
        out
    }

    pub fn convert<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, arr) in &self.entries {
            out.entries.insert(
                name.clone(),
                ParamArray {
                    shape: arr.shape.clone(),
                    data: arr.data.iter().map(|&v| T::of(v.as_f64())).collect(),
                },
            );
        }
        out
    }
}

/// Leaf handles for a parameter store registered on a tape.
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no bound parameter '{name}'")))
    }
}

impl<S: Scalar> Tape<S> {
    /// Registers every array of the store as a named differentiable leaf.
    pub fn bind_store(&mut self, store: &ParamStore<S>) -> Result<Binding> {
        let mut vars = BTreeMap::new();
        for (name, arr) in store.iter() {
            let v = self.leaf(name, &arr.shape, arr.data.clone())?;
            vars.insert(name.clone(), v);
        }
        Ok(Binding { vars })
    }
}

/// Gradients keyed by parameter name. Every named leaf of the tape appears;
/// leaves the loss does not reach carry zeros.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    map: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub(crate) fn new(map: BTreeMap<String, Vec<S>>) -> Self {
        Self { map }
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Accumulates `other` into `self`, which must share the key set.
    pub fn add_assign(&mut self, other: &Gradients<S>) -> Result<()> {
        for (name, src) in &other.map {
            let dst = self
                .map
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient key '{name}' missing")))?;
            if dst.len() != src.len() {
                return Err(Error::ShapeMismatch {
                    op: "gradient accumulate",
                    lhs: vec![dst.len()],
                    rhs: vec![src.len()],
                });
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: S) {
        for v in self.map.values_mut() {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
    }
}
