use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{expect_shape, features_to_rows, squared_difference_score, take, Descriptor, HeadDims, SingleFrameHead};
use crate::error::{Error, Result};
use crate::numerics::{init_weight, softmax_in_place, ParamStore, Tensor2};
use crate::types::GalleryItem;

pub(crate) const EMBED_W: &str = "mf.embed.W";
pub(crate) const EMBED_B: &str = "mf.embed.b";
pub(crate) const Q_W: &str = "mf.nlb.q.W";
pub(crate) const Q_B: &str = "mf.nlb.q.b";
pub(crate) const K_W: &str = "mf.nlb.k.W";
pub(crate) const K_B: &str = "mf.nlb.k.b";
pub(crate) const V_W: &str = "mf.nlb.v.W";
pub(crate) const V_B: &str = "mf.nlb.v.b";
pub(crate) const OUT_W: &str = "mf.nlb.out.W";
pub(crate) const OUT_B: &str = "mf.nlb.out.b";
pub(crate) const ATTN_W: &str = "mf.attn.w";
pub(crate) const ATTN_B: &str = "mf.attn.b";
pub(crate) const MATCH_W: &str = "mf.match.w";
pub(crate) const MATCH_B: &str = "mf.match.b";

/// Embedded-Gaussian self-attention over the frame axis with a residual
/// output transform:
/// `y_t = x_t + W_out · Σ_s softmax_s(θ(x_t)·φ(x_s)/√d) v(x_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalBlock {
    pub(crate) q_w: Tensor2,
    pub(crate) q_b: Tensor2,
    pub(crate) k_w: Tensor2,
    pub(crate) k_b: Tensor2,
    pub(crate) v_w: Tensor2,
    pub(crate) v_b: Tensor2,
    pub(crate) out_w: Tensor2,
    pub(crate) out_b: Tensor2,
}

impl NonLocalBlock {
    fn new(embed: usize, inner: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q_w: init_weight(embed, inner, rng),
            q_b: Tensor2::zeros(1, inner),
            k_w: init_weight(embed, inner, rng),
            k_b: Tensor2::zeros(1, inner),
            v_w: init_weight(embed, inner, rng),
            v_b: Tensor2::zeros(1, inner),
            // zero output transform: the block starts as the identity
            out_w: Tensor2::zeros(inner, embed),
            out_b: Tensor2::zeros(1, embed),
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.q_w.cols()
    }

    /// `T×embed → T×embed`.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let q = x.matmul(&self.q_w)?.add_row(&self.q_b)?;
        let k = x.matmul(&self.k_w)?.add_row(&self.k_b)?;
        let v = x.matmul(&self.v_w)?.add_row(&self.v_b)?;
        let scale = 1.0 / (self.inner_dim() as f64).sqrt();
        let affinity = q.matmul_nt(&k)?.scale(scale).softmax_rows();
        let z = affinity.matmul(&v)?;
        let out = z.matmul(&self.out_w)?.add_row(&self.out_b)?;
        x.add(&out)
    }

    pub fn out_w(&self) -> &Tensor2 {
        &self.out_w
    }

    pub fn set_out_w(&mut self, w: Tensor2) -> Result<()> {
        expect_shape(&w, OUT_W, self.out_w.shape())?;
        self.out_w = w;
        Ok(())
    }
}

/// Per-frame importance weights: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// How the frames of a tracklet are fused into one descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// `h(x) = g(NLB(x)) · x`.
    Attention,
    /// Attention `g` applied to the raw frame embeddings, no non-local block.
    AttentionWithoutNlb,
    /// Plain average of the frame embeddings.
    Mean,
}

/// Embedding `f̃`, non-local block, attention `g` and matcher `m̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameHead {
    dims: HeadDims,
    pub(crate) embed_w: Tensor2,
    pub(crate) embed_b: Tensor2,
    pub(crate) nlb: NonLocalBlock,
    pub(crate) attn_w: Tensor2,
    pub(crate) attn_b: Tensor2,
    pub(crate) match_w: Tensor2,
    pub(crate) match_b: Tensor2,
}

impl MultiFrameHead {
    /// Copies `f` and `m` into `f̃` and `m̃`; the non-local block and the
    /// attention layer are drawn from `seed`.
    pub fn init_from_single(single: &SingleFrameHead, seed: u64) -> Self {
        let dims = single.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nlb = NonLocalBlock::new(dims.embed, dims.inner, &mut rng);
        Self {
            dims,
            embed_w: single.embed_w.clone(),
            embed_b: single.embed_b.clone(),
            nlb,
            attn_w: init_weight(dims.embed, 1, &mut rng),
            attn_b: Tensor2::zeros(1, 1),
            match_w: single.match_w.clone(),
            match_b: single.match_b.clone(),
        }
    }

    pub fn dims(&self) -> HeadDims {
        self.dims
    }

    pub fn nlb(&self) -> &NonLocalBlock {
        &self.nlb
    }

    pub fn nlb_mut(&mut self) -> &mut NonLocalBlock {
        &mut self.nlb
    }

    /// `f̃(c)`.
    pub fn embed(&self, feature: &[f32]) -> Result<Descriptor> {
        let rows = self.embed_features(&[feature])?;
        Ok(Descriptor::new(rows.into_vec()))
    }

    pub fn embed_features(&self, features: &[&[f32]]) -> Result<Tensor2> {
        let x = features_to_rows(features, self.dims.input)?;
        self.embed_rows(&x)
    }

    pub fn embed_rows(&self, x: &Tensor2) -> Result<Tensor2> {
        x.matmul(&self.embed_w)?.add_row(&self.embed_b)
    }

    /// Non-local block over a `T×embed` sequence.
    pub fn apply_nlb(&self, seq: &Tensor2) -> Result<Tensor2> {
        self.check_seq(seq)?;
        self.nlb.forward(seq)
    }

    /// `g(NLB(x))`.
    pub fn attend(&self, seq: &Tensor2) -> Result<AttentionWeights> {
        let enriched = self.apply_nlb(seq)?;
        self.score_frames(&enriched)
    }

    /// `g(x)` without the non-local block.
    pub fn attend_without_nlb(&self, seq: &Tensor2) -> Result<AttentionWeights> {
        self.check_seq(seq)?;
        self.score_frames(seq)
    }

    fn score_frames(&self, rows: &Tensor2) -> Result<AttentionWeights> {
        let logits = rows.matmul(&self.attn_w)?.add_row(&self.attn_b)?;
        let mut w = logits.into_vec();
        softmax_in_place(&mut w);
        Ok(AttentionWeights(w))
    }

    /// `h(x) = g(NLB(x)) · x`: attention-weighted sum of the input rows.
    pub fn aggregate(&self, seq: &Tensor2) -> Result<Descriptor> {
        self.fuse(seq, Fusion::Attention)
    }

    pub fn fuse(&self, seq: &Tensor2, fusion: Fusion) -> Result<Descriptor> {
        let weights = match fusion {
            Fusion::Attention => self.attend(seq)?,
            Fusion::AttentionWithoutNlb => self.attend_without_nlb(seq)?,
            Fusion::Mean => {
                self.check_seq(seq)?;
                AttentionWeights::uniform(seq.rows())
            }
        };
        Ok(weighted_sum(seq, &weights))
    }

    /// `m̃(a, b)` in `[0, 1]`.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        squared_difference_score(&self.match_w, self.match_b.data()[0], a, b)
    }

    /// Shop descriptor: a one-frame tracklet, i.e. `f̃(c_j)`.
    pub fn shop_descriptor(&self, item: &GalleryItem) -> Result<Descriptor> {
        self.embed(&item.conv_feature)
    }

    fn check_seq(&self, seq: &Tensor2) -> Result<()> {
        if seq.cols() != self.dims.embed {
            return Err(Error::Shape {
                op: "multi-frame sequence",
                left: seq.shape(),
                right: (seq.rows(), self.dims.embed),
            });
        }
        Ok(())
    }

    pub fn param_names() -> [&'static str; 14] {
        [
            EMBED_W, EMBED_B, Q_W, Q_B, K_W, K_B, V_W, V_B, OUT_W, OUT_B, ATTN_W, ATTN_B, MATCH_W, MATCH_B,
        ]
    }

    pub fn write_params(&self, store: &mut ParamStore) {
        for (name, t) in [
            (EMBED_W, &self.embed_w),
            (EMBED_B, &self.embed_b),
            (Q_W, &self.nlb.q_w),
            (Q_B, &self.nlb.q_b),
            (K_W, &self.nlb.k_w),
            (K_B, &self.nlb.k_b),
            (V_W, &self.nlb.v_w),
            (V_B, &self.nlb.v_b),
            (OUT_W, &self.nlb.out_w),
            (OUT_B, &self.nlb.out_b),
            (ATTN_W, &self.attn_w),
            (ATTN_B, &self.attn_b),
            (MATCH_W, &self.match_w),
            (MATCH_B, &self.match_b),
        ] {
            store.insert(name, t.clone());
        }
    }

    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let embed_w = take(store, EMBED_W)?;
        let (input, embed) = embed_w.shape();
        let q_w = take(store, Q_W)?;
        let inner = q_w.cols();
        let head = Self {
            dims: HeadDims { input, embed, inner },
            embed_w,
            embed_b: take(store, EMBED_B)?,
            nlb: NonLocalBlock {
                q_w,
                q_b: take(store, Q_B)?,
                k_w: take(store, K_W)?,
                k_b: take(store, K_B)?,
                v_w: take(store, V_W)?,
                v_b: take(store, V_B)?,
                out_w: take(store, OUT_W)?,
                out_b: take(store, OUT_B)?,
            },
            attn_w: take(store, ATTN_W)?,
            attn_b: take(store, ATTN_B)?,
            match_w: take(store, MATCH_W)?,
            match_b: take(store, MATCH_B)?,
        };
        for (name, t, shape) in [
            (EMBED_B, &head.embed_b, (1, embed)),
            (Q_W, &head.nlb.q_w, (embed, inner)),
            (Q_B, &head.nlb.q_b, (1, inner)),
            (K_W, &head.nlb.k_w, (embed, inner)),
            (K_B, &head.nlb.k_b, (1, inner)),
            (V_W, &head.nlb.v_w, (embed, inner)),
            (V_B, &head.nlb.v_b, (1, inner)),
            (OUT_W, &head.nlb.out_w, (inner, embed)),
            (OUT_B, &head.nlb.out_b, (1, embed)),
            (ATTN_W, &head.attn_w, (embed, 1)),
            (ATTN_B, &head.attn_b, (1, 1)),
            (MATCH_W, &head.match_w, (embed, 1)),
            (MATCH_B, &head.match_b, (1, 1)),
        ] {
            expect_shape(t, name, shape)?;
        }
        Ok(head)
    }
}

/// `Σ_t w_t · row_t`, summed in row order.
pub(crate) fn weighted_sum(rows: &Tensor2, weights: &AttentionWeights) -> Descriptor {
    let mut out = vec![0.0; rows.cols()];
    for (t, &w) in weights.as_slice().iter().enumerate() {
        for (o, v) in out.iter_mut().zip(rows.row(t)) {
            *o += w * v;
        }
    }
    Descriptor::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dims() -> HeadDims {
        HeadDims {
            input: 5,
            embed: 4,
            inner: 2,
        }
    }

    fn head(seed: u64) -> MultiFrameHead {
        let sf = SingleFrameHead::new(dims(), 11);
        let mut mf = MultiFrameHead::init_from_single(&sf, seed);
        // give the residual branch something to do
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        mf.nlb.out_w = Tensor2::uniform(2, 4, 0.8, &mut rng);
        mf
    }

    fn random_seq(t: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
        Tensor2::uniform(t, 4, 1.5, rng)
    }

    #[test]
    fn nlb_with_zero_output_transform_is_identity() {
        let sf = SingleFrameHead::new(dims(), 1);
        let mf = MultiFrameHead::init_from_single(&sf, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_seq(3, &mut rng);
        assert_eq!(mf.apply_nlb(&x).unwrap(), x);
    }

    #[test]
    fn nlb_single_frame_is_residual_of_value() {
        let mf = head(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_seq(1, &mut rng);
        let v = x.matmul(&mf.nlb.v_w).unwrap().add_row(&mf.nlb.v_b).unwrap();
        let expected = x
            .add(&v.matmul(&mf.nlb.out_w).unwrap().add_row(&mf.nlb.out_b).unwrap())
            .unwrap();
        let y = mf.apply_nlb(&x).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn nlb_hand_computed_two_frames() {
        // embed 4, inner 2; every transform chosen so the forward pass can be
        // written out by hand
        let sf = SingleFrameHead::new(dims(), 1);
        let mut mf = MultiFrameHead::init_from_single(&sf, 2);
        let t = |r, c, v: &[f64]| Tensor2::from_vec(r, c, v.to_vec()).unwrap();
        // q = first two coords, k = first two coords, v = last two coords
        mf.nlb.q_w = t(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        mf.nlb.k_w = mf.nlb.q_w.clone();
        mf.nlb.v_w = t(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        // out writes v back into the first two coords
        mf.nlb.out_w = t(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let x = t(2, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 4.0]);
        // q·k / √2: [[1,0],[0,1]] / √2 → row softmax [a, 1-a]
        let a = 1.0 / (1.0 + (-1.0 / 2f64.sqrt()).exp());
        // z_0 = a·(2,0) + (1-a)·(0,4); z_1 = (1-a)·(2,0) + a·(0,4)
        let expected = [
            1.0 + 2.0 * a,
            4.0 * (1.0 - a),
            2.0,
            0.0,
            2.0 * (1.0 - a),
            1.0 + 4.0 * a,
            0.0,
            4.0,
        ];
        let y = mf.apply_nlb(&x).unwrap();
        for (got, want) in y.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn nlb_is_permutation_equivariant() {
        let mf = head(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_seq(5, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let px = Tensor2::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let y = mf.apply_nlb(&x).unwrap();
        let py = mf.apply_nlb(&px).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in py.row(k).iter().zip(y.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_edge_cases() {
        let mf = head(5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let one = random_seq(1, &mut rng);
        assert_eq!(mf.attend(&one).unwrap().as_slice(), &[1.0]);
        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let same = Tensor2::from_rows(&vec![row; 6]).unwrap();
        for w in mf.attend(&same).unwrap().as_slice() {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
        let wrong = Tensor2::zeros(3, 5);
        assert!(mf.attend(&wrong).is_err());
    }

    #[test]
    fn aggregate_edge_cases() {
        let mf = head(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let one = random_seq(1, &mut rng);
        assert_eq!(mf.aggregate(&one).unwrap().as_slice(), one.row(0));

        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let same = Tensor2::from_rows(&vec![row.clone(); 3]).unwrap();
        let agg = mf.aggregate(&same).unwrap();
        let mean = mf.fuse(&same, Fusion::Mean).unwrap();
        for ((a, m), r) in agg.as_slice().iter().zip(mean.as_slice()).zip(&row) {
            assert!((a - r).abs() < 1e-14);
            assert!((m - r).abs() < 1e-14);
        }
    }

    #[test]
    fn copy_init_matches_single_head() {
        let sf = SingleFrameHead::new(dims(), 21);
        let mf = MultiFrameHead::init_from_single(&sf, 22);
        let c = [0.1f32, -0.4, 0.9, 1.2, -2.0];
        assert_eq!(mf.embed(&c).unwrap(), sf.embed(&c).unwrap());
        let a = [0.2, 0.1, -0.3, 0.8];
        let b = [-0.5, 0.4, 0.3, 0.0];
        assert_eq!(mf.score(&a, &b).unwrap(), sf.score(&a, &b).unwrap());
        assert_eq!(MultiFrameHead::init_from_single(&sf, 22), mf);
        let other = MultiFrameHead::init_from_single(&sf, 23);
        assert_ne!(other.nlb.q_w, mf.nlb.q_w);
        assert_ne!(other.attn_w, mf.attn_w);
        assert_eq!(other.embed_w, mf.embed_w);
    }

    #[test]
    fn shop_descriptor_is_one_frame_aggregate() {
        let mf = head(7);
        let item = GalleryItem {
            item_id: "x".into(),
            class_label: crate::types::ClothingClass::Skirt,
            conv_feature: vec![0.3, 0.2, -0.1, 0.7, 1.0],
        };
        let shop = mf.shop_descriptor(&item).unwrap();
        let seq = mf.embed_features(&[&item.conv_feature]).unwrap();
        assert_eq!(mf.aggregate(&seq).unwrap(), shop);
        assert_eq!(mf.shop_descriptor(&item).unwrap(), shop);
    }

    #[test]
    fn params_round_trip() {
        let mf = head(8);
        let mut store = ParamStore::new();
        mf.write_params(&mut store);
        assert_eq!(MultiFrameHead::from_params(&store).unwrap(), mf);
        store.insert(ATTN_W, Tensor2::zeros(3, 1));
        assert!(MultiFrameHead::from_params(&store).is_err());
    }
}
