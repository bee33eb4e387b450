use std::collections::BTreeMap;

use super::tape::Gradients;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

/// Named parameter tensors with accumulated gradients, iterated by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter and resets its gradient.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        self.params.insert(name.into(), Param { value, grad });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored gradients. Unknown names are an error.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Euclidean norm of all gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies every parameter whose name starts with `prefix` into `other`.
    pub fn extend_from(&mut self, other: &ParamStore, prefix: &str) {
        for (name, p) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.insert(name, p.value.clone());
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor2>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one update and zeroes the gradients. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        for (name, p) in params.params.iter_mut() {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor2::zeros(p.value.rows(), p.value.cols()));
            for ((vv, gv), pv) in v
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(p.value.data_mut())
            {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// One momentum-SGD step with a fresh optimizer state.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    Sgd::new(lr, 0.0).step(params)
}
