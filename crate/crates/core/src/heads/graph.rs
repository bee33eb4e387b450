//! Tape versions of the head computations, used for training and gradient
//! checks. Every function mirrors an inference method on
//! [`SingleFrameHead`](super::SingleFrameHead) or
//! [`MultiFrameHead`](super::MultiFrameHead).

use super::multi::{self, Fusion};
use super::single;
use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct SingleVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub match_w: Var,
    pub match_b: Var,
}

impl SingleVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            embed_w: tape.param(store, single::EMBED_W)?,
            embed_b: tape.param(store, single::EMBED_B)?,
            match_w: tape.param(store, single::MATCH_W)?,
            match_b: tape.param(store, single::MATCH_B)?,
        })
    }

    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.embed_w, self.embed_b)
    }

    /// Scores every row of `rows` against the single row `other`; `N×1`.
    pub fn score_rows(&self, tape: &mut Tape, rows: Var, other: Var) -> Result<Var> {
        score_rows(tape, self.match_w, self.match_b, rows, other)
    }

    /// Scores row `i` of `a` against row `i` of `b`; `N×1`.
    pub fn score_pairs(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let d = tape.sub(a, b)?;
        let sq = tape.mul(d, d)?;
        let z = tape.linear(sq, self.match_w, self.match_b)?;
        tape.sigmoid(z)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultiVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub attn_w: Var,
    pub attn_b: Var,
    pub match_w: Var,
    pub match_b: Var,
    inner: usize,
}

impl MultiVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        let inner = store.value(multi::Q_W)?.cols();
        Ok(Self {
            embed_w: tape.param(store, multi::EMBED_W)?,
            embed_b: tape.param(store, multi::EMBED_B)?,
            q_w: tape.param(store, multi::Q_W)?,
            q_b: tape.param(store, multi::Q_B)?,
            k_w: tape.param(store, multi::K_W)?,
            k_b: tape.param(store, multi::K_B)?,
            v_w: tape.param(store, multi::V_W)?,
            v_b: tape.param(store, multi::V_B)?,
            out_w: tape.param(store, multi::OUT_W)?,
            out_b: tape.param(store, multi::OUT_B)?,
            attn_w: tape.param(store, multi::ATTN_W)?,
            attn_b: tape.param(store, multi::ATTN_B)?,
            match_w: tape.param(store, multi::MATCH_W)?,
            match_b: tape.param(store, multi::MATCH_B)?,
            inner,
        })
    }

    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.embed_w, self.embed_b)
    }

    pub fn nlb(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let q = tape.linear(x, self.q_w, self.q_b)?;
        let k = tape.linear(x, self.k_w, self.k_b)?;
        let v = tape.linear(x, self.v_w, self.v_b)?;
        let s = tape.matmul_nt(q, k)?;
        let s = tape.scale(s, 1.0 / (self.inner as f64).sqrt())?;
        let a = tape.softmax_rows(s)?;
        let z = tape.matmul(a, v)?;
        let out = tape.linear(z, self.out_w, self.out_b)?;
        tape.add(x, out)
    }

    /// Attention weights as a `1×T` row.
    pub fn attend(&self, tape: &mut Tape, x: Var, fusion: Fusion) -> Result<Var> {
        let frames = match fusion {
            Fusion::Attention => self.nlb(tape, x)?,
            Fusion::AttentionWithoutNlb => x,
            Fusion::Mean => {
                let t = tape.value(x).rows();
                return tape.constant(crate::numerics::Tensor2::full(1, t, 1.0 / t as f64));
            }
        };
        let logits = tape.linear(frames, self.attn_w, self.attn_b)?;
        let row = tape.transpose(logits)?;
        tape.softmax_rows(row)
    }

    /// Fused `1×embed` descriptor of the `T×embed` sequence `x`.
    pub fn aggregate(&self, tape: &mut Tape, x: Var, fusion: Fusion) -> Result<Var> {
        let w = self.attend(tape, x, fusion)?;
        tape.matmul(w, x)
    }

    pub fn score_rows(&self, tape: &mut Tape, rows: Var, other: Var) -> Result<Var> {
        score_rows(tape, self.match_w, self.match_b, rows, other)
    }
}

fn score_rows(tape: &mut Tape, w: Var, b: Var, rows: Var, other: Var) -> Result<Var> {
    let d = tape.sub_row(rows, other)?;
    let sq = tape.mul(d, d)?;
    let z = tape.linear(sq, w, b)?;
    tape.sigmoid(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{HeadDims, Heads, SingleFrameHead};
    use crate::numerics::{grad_check, Tensor2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heads() -> Heads {
        let dims = HeadDims {
            input: 6,
            embed: 5,
            inner: 3,
        };
        let mut h = Heads::from_single(SingleFrameHead::new(dims, 1), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        h.multi.nlb.out_w = Tensor2::uniform(3, 5, 0.7, &mut rng);
        h
    }

    #[test]
    fn tape_forward_matches_inference() {
        let h = heads();
        let store = h.to_params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = Tensor2::uniform(4, 6, 1.0, &mut rng);
        let shop = Tensor2::uniform(1, 6, 1.0, &mut rng);

        for fusion in [Fusion::Attention, Fusion::AttentionWithoutNlb, Fusion::Mean] {
            let mut tape = Tape::new();
            let mv = MultiVars::bind(&mut tape, &store).unwrap();
            let x = tape.constant(feats.clone()).unwrap();
            let s = tape.constant(shop.clone()).unwrap();
            let ex = mv.embed(&mut tape, x).unwrap();
            let es = mv.embed(&mut tape, s).unwrap();
            let agg = mv.aggregate(&mut tape, ex, fusion).unwrap();
            let score = mv.score_rows(&mut tape, agg, es).unwrap();

            let seq = h.multi.embed_rows(&feats).unwrap();
            let want_agg = h.multi.fuse(&seq, fusion).unwrap();
            let want_shop = h.multi.embed_rows(&shop).unwrap();
            let want = h.multi.score(want_agg.as_slice(), want_shop.row(0)).unwrap();
            for (a, b) in tape.value(agg).data().iter().zip(want_agg.as_slice()) {
                assert!((a - b).abs() < 1e-13);
            }
            assert!((tape.scalar(score) - want).abs() < 1e-13);
        }

        let mut tape = Tape::new();
        let sv = SingleVars::bind(&mut tape, &store).unwrap();
        let x = tape.constant(feats.clone()).unwrap();
        let s = tape.constant(shop.clone()).unwrap();
        let ex = sv.embed(&mut tape, x).unwrap();
        let es = sv.embed(&mut tape, s).unwrap();
        let scores = sv.score_rows(&mut tape, ex, es).unwrap();
        let shop_desc = h.single.embed_rows(&shop).unwrap();
        let emb = h.single.embed_rows(&feats).unwrap();
        for r in 0..4 {
            let want = h.single.score(emb.row(r), shop_desc.row(0)).unwrap();
            assert!((tape.value(scores).get(r, 0) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn every_op_passes_grad_check_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..6 {
            let n = 1 + trial % 4;
            let k = 2 + (trial * 3) % 7;
            let m = 1 + (trial * 5) % 8;
            let mut store = ParamStore::new();
            store.insert("a", Tensor2::uniform(n, k, 1.0, &mut rng));
            store.insert("b", Tensor2::uniform(k, m, 1.0, &mut rng));
            store.insert("c", Tensor2::uniform(n, m, 1.0, &mut rng));
            store.insert("r", Tensor2::uniform(1, m, 1.0, &mut rng));
            store.insert("d", Tensor2::uniform(n, k, 1.0, &mut rng));
            let loss = |tape: &mut Tape, s: &ParamStore| {
                let a = tape.param(s, "a")?;
                let b = tape.param(s, "b")?;
                let c = tape.param(s, "c")?;
                let r = tape.param(s, "r")?;
                let d = tape.param(s, "d")?;
                let ab = tape.matmul(a, b)?;
                let abr = tape.add_row(ab, r)?;
                let sm = tape.softmax_rows(abr)?;
                let mixed = tape.mul(sm, c)?;
                let ad = tape.matmul_nt(a, d)?;
                let adt = tape.transpose(ad)?;
                let sg = tape.sigmoid(adt)?;
                let sgs = tape.scale(sg, 0.7)?;
                let s1 = tape.sum(mixed)?;
                let s2 = tape.mean(sgs)?;
                let probs = tape.sigmoid(c)?;
                let pr = tape.transpose(probs)?;
                let col = tape.matmul_nt(pr, pr)?;
                let flat = tape.sigmoid(col)?;
                let rows = tape.value(flat).rows();
                let target: Vec<f64> = (0..rows).map(|i| (i % 2) as f64).collect();
                let ones = tape_ones(tape, rows)?;
                let first_col = tape.matmul(flat, ones)?;
                let scaled = tape.scale(first_col, 1.0 / rows as f64)?;
                let p = tape.sigmoid(scaled)?;
                let l3 = tape.bce(p, &target)?;
                let s12 = tape.add(s1, s2)?;
                tape.add(s12, l3)
            };
            let report = grad_check(&store, loss, 1e-5, 1e-6).unwrap();
            assert!(report.passed(), "trial {trial}: {report:?}");
        }
    }

    fn tape_ones(tape: &mut Tape, n: usize) -> Result<Var> {
        tape.constant(Tensor2::full(n, 1, 1.0))
    }
}
