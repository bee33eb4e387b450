//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a `1×1` result walks the record in reverse and
//! returns the gradient of every parameter leaf, keyed by parameter name.
//! Only the handful of operations the matching heads need are supported.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    Sum(Var),
    Bce(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Bce(..) => "bce",
        }
    }
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Gradients of named parameters produced by [`Tape::backward`].
pub type Gradients = BTreeMap<String, Tensor2>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor2) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Binds the named parameter. Repeated calls return the same leaf so the
    /// gradient accumulates across every use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push(out, Op::MatMulNt(a, b))
    }

    /// Adds the `1×cols` row `bias` to each row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(bias))?;
        self.push(out, Op::AddRow(x, bias))
    }

    /// Subtracts the `1×cols` row `r` from each row of `x`.
    pub fn sub_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let neg = self.scale(r, -1.0)?;
        self.add_row(x, neg)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Sum of all entries as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor2::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Summed binary cross-entropy of the probabilities in the `N×1` column
    /// `probs` against `targets`. Probabilities are clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`; the clamped region has zero gradient.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.cols() != 1 || p.rows() != targets.len() {
            return Err(Error::Shape {
                op: "bce",
                left: p.shape(),
                right: (targets.len(), 1),
            });
        }
        let loss: f64 = p
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum();
        self.push(Tensor2::scalar(loss), Op::Bce(probs, targets.to_vec()))
    }

    /// Backpropagates from the `1×1` node `loss` and returns the gradient of
    /// every bound parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if root.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: root.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddRow(x, bias) => {
                    let db = g.sum_rows();
                    accumulate(&mut grads, *x, g)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b))?;
                    let db = g.mul(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *dv *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut d = g;
                    for (drow, yrow) in d.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let inner: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (dv, yv) in drow.iter_mut().zip(yrow) {
                            *dv = yv * (*dv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor2::full(r, c, g.data()[0]))?;
                }
                Op::Bce(p, targets) => {
                    let upstream = g.data()[0];
                    let probs = self.value(*p);
                    let d: Vec<f64> = probs
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                                0.0
                            } else {
                                upstream * (p - t) / (p * (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *p, Tensor2::from_vec(probs.rows(), 1, d)?)?;
                }
            }
        }

        let mut out = Gradients::new();
        for (name, var) in &self.params {
            let (r, c) = self.value(*var).shape();
            let g = grads
                .get_mut(var.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor2::zeros(r, c));
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
