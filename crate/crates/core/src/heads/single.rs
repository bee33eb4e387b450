use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{expect_shape, features_to_rows, squared_difference_score, take, Descriptor, HeadDims};
use crate::error::Result;
use crate::numerics::{init_weight, ParamStore, Tensor2};

pub(crate) const EMBED_W: &str = "sf.embed.W";
pub(crate) const EMBED_B: &str = "sf.embed.b";
pub(crate) const MATCH_W: &str = "sf.match.w";
pub(crate) const MATCH_B: &str = "sf.match.b";

/// Embedding `f` (linear `D_c → embed`) and matcher `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleFrameHead {
    dims: HeadDims,
    pub(crate) embed_w: Tensor2,
    pub(crate) embed_b: Tensor2,
    pub(crate) match_w: Tensor2,
    pub(crate) match_b: Tensor2,
}

impl SingleFrameHead {
    pub fn new(dims: HeadDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            dims,
            embed_w: init_weight(dims.input, dims.embed, &mut rng),
            embed_b: Tensor2::zeros(1, dims.embed),
            match_w: init_weight(dims.embed, 1, &mut rng),
            match_b: Tensor2::zeros(1, 1),
        }
    }

    pub fn dims(&self) -> HeadDims {
        self.dims
    }

    /// `f(c)`.
    pub fn embed(&self, feature: &[f32]) -> Result<Descriptor> {
        let rows = self.embed_features(&[feature])?;
        Ok(Descriptor::new(rows.into_vec()))
    }

    /// Embeds each feature into one row of the result.
    pub fn embed_features(&self, features: &[&[f32]]) -> Result<Tensor2> {
        let x = features_to_rows(features, self.dims.input)?;
        self.embed_rows(&x)
    }

    pub fn embed_rows(&self, x: &Tensor2) -> Result<Tensor2> {
        x.matmul(&self.embed_w)?.add_row(&self.embed_b)
    }

    /// `m(a, b)` in `[0, 1]`.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        squared_difference_score(&self.match_w, self.match_b.data()[0], a, b)
    }

    pub fn param_names() -> [&'static str; 4] {
        [EMBED_W, EMBED_B, MATCH_W, MATCH_B]
    }

    pub fn write_params(&self, store: &mut ParamStore) {
        store.insert(EMBED_W, self.embed_w.clone());
        store.insert(EMBED_B, self.embed_b.clone());
        store.insert(MATCH_W, self.match_w.clone());
        store.insert(MATCH_B, self.match_b.clone());
    }

    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let embed_w = take(store, EMBED_W)?;
        let (input, embed) = embed_w.shape();
        let dims = HeadDims {
            input,
            embed,
            // the single-frame head has no inner width; keep the default ratio
            inner: (embed / 2).max(1),
        };
        let head = Self {
            dims,
            embed_w,
            embed_b: take(store, EMBED_B)?,
            match_w: take(store, MATCH_W)?,
            match_b: take(store, MATCH_B)?,
        };
        expect_shape(&head.embed_b, EMBED_B, (1, embed))?;
        expect_shape(&head.match_w, MATCH_W, (embed, 1))?;
        expect_shape(&head.match_b, MATCH_B, (1, 1))?;
        Ok(head)
    }

    /// Sets the non-local block width a multi-frame head built from this one
    /// will use.
    pub fn with_inner(mut self, inner: usize) -> Self {
        self.dims.inner = inner;
        self
    }
}
