//! Single-frame and multi-frame matching heads.
//!
//! The single-frame head embeds one detection feature (`f`) and scores a pair
//! of embeddings (`m`). The multi-frame head embeds every frame of a tracklet
//! (`f̃`), enriches the sequence with a residual non-local block, turns it into
//! per-frame attention weights (`g`), and aggregates the *original* frame
//! embeddings with those weights before scoring against a shop descriptor
//! (`m̃`).
//!
//! Both matchers have the form `sigmoid(w · (a - b)² + b0)`, which is
//! symmetric in its arguments and maps into `[0, 1]`.
//!
//! Inference here runs directly on [`Tensor2`]; [`graph`] rebuilds the same
//! computations on a [`Tape`](crate::numerics::Tape) for training.

pub mod graph;
mod multi;
mod single;

pub use multi::{AttentionWeights, Fusion, MultiFrameHead, NonLocalBlock};
pub use single::SingleFrameHead;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, ParamStore, Tensor2};

/// Layer widths of the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadDims {
    /// Backbone feature dimension `D_c`.
    pub input: usize,
    /// Descriptor dimension.
    pub embed: usize,
    /// Non-local block inner dimension.
    pub inner: usize,
}

impl Default for HeadDims {
    fn default() -> Self {
        Self {
            input: 1024,
            embed: 256,
            inner: 128,
        }
    }
}

impl HeadDims {
    pub fn with_input(input: usize) -> Self {
        Self {
            input,
            ..Self::default()
        }
    }
}

/// An embedding produced by `f` or `f̃`, or aggregated by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Descriptor {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `sigmoid(Σ w_i (a_i - b_i)² + bias)`.
pub(crate) fn squared_difference_score(w: &Tensor2, bias: f64, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != w.rows() {
        return Err(Error::Shape {
            op: "match",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let z: f64 = a
        .iter()
        .zip(b)
        .zip(w.data())
        .map(|((x, y), wi)| {
            let d = x - y;
            wi * d * d
        })
        .sum();
    Ok(sigmoid(z + bias))
}

pub(crate) fn features_to_rows(features: &[&[f32]], dim: usize) -> Result<Tensor2> {
    if features.is_empty() {
        return Err(Error::Empty("feature rows"));
    }
    let mut data = Vec::with_capacity(features.len() * dim);
    for f in features {
        if f.len() != dim {
            return Err(Error::invalid(format!(
                "feature has dimension {} but the head expects {dim}",
                f.len()
            )));
        }
        data.extend(f.iter().map(|&v| v as f64));
    }
    Tensor2::from_vec(features.len(), dim, data)
}

/// The pair of heads making up a full model.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub single: SingleFrameHead,
    pub multi: MultiFrameHead,
}

impl Heads {
    /// Pretrained single-frame head plus a multi-frame head initialised from it.
    pub fn from_single(single: SingleFrameHead, seed: u64) -> Self {
        let multi = MultiFrameHead::init_from_single(&single, seed);
        Self { single, multi }
    }

    pub fn dims(&self) -> HeadDims {
        self.single.dims()
    }

    pub fn to_params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        self.single.write_params(&mut store);
        self.multi.write_params(&mut store);
        store
    }

    pub fn from_params(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            single: SingleFrameHead::from_params(store)?,
            multi: MultiFrameHead::from_params(store)?,
        })
    }
}

pub(crate) fn take(store: &ParamStore, name: &str) -> Result<Tensor2> {
    store.value(name).cloned()
}

pub(crate) fn expect_shape(t: &Tensor2, name: &str, shape: (usize, usize)) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::invalid(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}
