//! Source pretraining of the single-frame head and pseudo-label training of
//! both heads on unlabeled target sequences.
//!
//! Target training never sees box annotations. For each sequence the
//! detection that best matches the paired shop item becomes the pivot of a
//! tracklet; that tracklet is a positive for the paired item and a negative
//! for a few other items. Every detection of the tracklet gives the same
//! labels to the single-frame head.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{run_parallel, sample_clip};
use crate::heads::graph::{MultiVars, SingleVars};
use crate::heads::{features_to_rows, Fusion, HeadDims, Heads, SingleFrameHead};
use crate::numerics::{grad_check, GradCheckReport, Gradients, ParamStore, Sgd, Tape, Tensor2, Var};
use crate::synthetic::{generate_gallery, generate_sequences, stream_rng, SynthConfig};
use crate::tracking::{build_training_tracklet, TrackingConfig};
use crate::types::{GalleryItem, SequenceRecord, Tracklet};

const STREAM_PRETRAIN: u64 = 30;
const STREAM_PSEUDO: u64 = 31;
const STREAM_ORDER: u64 = 32;

/// A labelled pair of backbone features: street detection and shop image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub street: Vec<f32>,
    pub shop: Vec<f32>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub dims: HeadDims,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dims: HeadDims::default(),
            epochs: 20,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Every detection of every record paired with its shop item (label 1) and
/// with `negatives` other items drawn uniformly (label 0).
pub fn pairs_from_records(records: &[SequenceRecord], gallery: &[GalleryItem], negatives: usize, seed: u64) -> Result<Vec<FeaturePair>> {
    let lookup = lookup(gallery);
    let mut rng = stream_rng(seed, STREAM_PRETRAIN, 0);
    let mut out = Vec::new();
    for r in records {
        let pos = &r.paired_item_ids[0];
        let shop = feature(&lookup, pos)?;
        let negs = draw_negatives(gallery, &r.paired_item_ids, negatives, &mut rng);
        for det in r.frames.iter().flatten() {
            out.push(FeaturePair {
                street: det.conv_feature.clone(),
                shop: shop.to_vec(),
                label: 1.0,
            });
            for n in &negs {
                out.push(FeaturePair {
                    street: det.conv_feature.clone(),
                    shop: feature(&lookup, n)?.to_vec(),
                    label: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// Trains a fresh single-frame head with mini-batch SGD on binary
/// cross-entropy. Returns the head and the mean loss and accuracy of each
/// epoch, measured during the epoch.
pub fn pretrain_single(pairs: &[FeaturePair], cfg: &PretrainConfig) -> Result<(SingleFrameHead, Vec<PretrainEpoch>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("pretraining pairs"));
    }
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::invalid("pretraining needs lr >= 0 and a positive batch size"));
    }
    if pairs.iter().any(|p| p.label != 0.0 && p.label != 1.0) {
        return Err(Error::invalid("pair labels must be 0 or 1"));
    }
    let positives = pairs.iter().filter(|p| p.label == 1.0).count();
    if positives == 0 || positives == pairs.len() {
        log::warn!("all {} pretraining pairs share one label", pairs.len());
    }
    let head = SingleFrameHead::new(cfg.dims, cfg.seed);
    let mut store = ParamStore::new();
    head.write_params(&mut store);
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, STREAM_ORDER, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let a: Vec<&[f32]> = batch.iter().map(|&i| pairs[i].street.as_slice()).collect();
            let b: Vec<&[f32]> = batch.iter().map(|&i| pairs[i].shop.as_slice()).collect();
            let labels: Vec<f64> = batch.iter().map(|&i| pairs[i].label).collect();
            let mut tape = Tape::new();
            let sv = SingleVars::bind(&mut tape, &store)?;
            let xa = tape.constant(features_to_rows(&a, cfg.dims.input)?)?;
            let xb = tape.constant(features_to_rows(&b, cfg.dims.input)?)?;
            let ea = sv.embed(&mut tape, xa)?;
            let eb = sv.embed(&mut tape, xb)?;
            let p = sv.score_pairs(&mut tape, ea, eb)?;
            let total = tape.bce(p, &labels).map_err(|e| at_step(e, epoch, step))?;
            let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
            loss_sum += tape.scalar(total);
            correct += tape
                .value(p)
                .data()
                .iter()
                .zip(&labels)
                .filter(|(s, l)| (**s > 0.5) == (**l == 1.0))
                .count();
            let grads = tape.backward(loss)?;
            store.accumulate(&grads)?;
            sgd.step(&mut store).map_err(|e| at_step(e, epoch, step))?;
        }
        let n = pairs.len() as f64;
        log.push(PretrainEpoch {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        });
    }
    Ok((SingleFrameHead::from_params(&store)?.with_inner(cfg.dims.inner), log))
}

/// Fraction of pairs the head classifies correctly at score 0.5.
pub fn pair_accuracy(head: &SingleFrameHead, pairs: &[FeaturePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut correct = 0;
    for p in pairs {
        let a = head.embed(&p.street)?;
        let b = head.embed(&p.shop)?;
        let s = head.score(a.as_slice(), b.as_slice())?;
        if (s > 0.5) == (p.label == 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

fn at_step(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, step {step}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Frames sampled per sequence.
    pub t: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Sequences per SGD step.
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub multi_weight: f64,
    pub single_weight: f64,
    pub tracking: TrackingConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: 10,
            lr: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 16,
            negatives_per_positive: 3,
            multi_weight: 1.0,
            single_weight: 1.0,
            tracking: TrackingConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.batch_size == 0 {
            return Err(Error::invalid("T and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.tracking.validate()
    }
}

/// A pseudo-labelled tracklet: positive for `positive`, negative for each of
/// `negatives`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGroup {
    pub sequence_id: String,
    pub tracklet: Tracklet,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl PseudoGroup {
    /// `(tracklet, item_id, label)` for the positive and every negative.
    pub fn pairs(&self) -> impl Iterator<Item = (&Tracklet, &str, f64)> {
        std::iter::once((&self.tracklet, self.positive.as_str(), 1.0))
            .chain(self.negatives.iter().map(move |n| (&self.tracklet, n.as_str(), 0.0)))
    }

    fn items(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pairs().map(|(_, id, l)| (id, l))
    }
}

fn lookup(gallery: &[GalleryItem]) -> HashMap<&str, &[f32]> {
    gallery.iter().map(|g| (g.item_id.as_str(), g.conv_feature.as_slice())).collect()
}

fn feature<'a>(lookup: &HashMap<&str, &'a [f32]>, id: &str) -> Result<&'a [f32]> {
    lookup
        .get(id)
        .copied()
        .ok_or_else(|| Error::invalid(format!("unknown gallery item {id}")))
}

fn draw_negatives<R: Rng + ?Sized>(gallery: &[GalleryItem], exclude: &[String], n: usize, rng: &mut R) -> Vec<String> {
    let candidates: Vec<&GalleryItem> = gallery.iter().filter(|g| !exclude.contains(&g.item_id)).collect();
    candidates
        .choose_multiple(rng, n.min(candidates.len()))
        .map(|g| g.item_id.clone())
        .collect()
}

/// Pseudo-labelled groups for `records`. Record `i` samples its frames and
/// negatives from a stream keyed by `(seed, salt, i)`. Returns the groups and
/// the number of records whose pivot gate failed.
pub fn make_pseudo_batch(
    records: &[SequenceRecord],
    gallery: &[GalleryItem],
    heads: &Heads,
    cfg: &TrainConfig,
    salt: u64,
    jobs: usize,
) -> Result<(Vec<PseudoGroup>, usize)> {
    let lookup = lookup(gallery);
    let made = run_parallel(records, jobs, |i, r| {
        let mut rng = stream_rng(cfg.seed, STREAM_PSEUDO, (salt << 24) | i as u64);
        let positive = &r.paired_item_ids[0];
        let shop = heads.single.embed(feature(&lookup, positive)?)?;
        let clip = sample_clip(r, cfg.t, &mut rng)?;
        let Some(tracklet) = build_training_tracklet(&clip, &shop, &heads.single, &cfg.tracking)? else {
            return Ok(None);
        };
        Ok(Some(PseudoGroup {
            sequence_id: r.sequence_id.clone(),
            tracklet,
            positive: positive.clone(),
            negatives: draw_negatives(gallery, &r.paired_item_ids, cfg.negatives_per_positive, &mut rng),
        }))
    })?;
    let skipped = made.iter().filter(|g| g.is_none()).count();
    Ok((made.into_iter().flatten().collect(), skipped))
}

/// Loss terms of one batch on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    /// Mean cross-entropy over (tracklet, item) pairs.
    pub multi: Var,
    /// Mean cross-entropy over (detection, item) pairs.
    pub single: Var,
    /// `multi_weight · multi + single_weight · single`.
    pub total: Var,
}

/// Builds the training loss of `groups` on `tape`.
pub fn batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    groups: &[PseudoGroup],
    gallery: &[GalleryItem],
    multi_weight: f64,
    single_weight: f64,
) -> Result<BatchLoss> {
    if groups.is_empty() {
        return Err(Error::Empty("pseudo-label groups"));
    }
    let lookup = lookup(gallery);
    let input = store.value("sf.embed.W")?.rows();
    let sv = SingleVars::bind(tape, store)?;
    let mv = MultiVars::bind(tape, store)?;
    let n_multi: usize = groups.iter().map(|g| 1 + g.negatives.len()).sum();
    let n_single: usize = groups.iter().map(|g| g.tracklet.len() * (1 + g.negatives.len())).sum();
    let mut multi_terms = Vec::new();
    let mut single_terms = Vec::new();
    for g in groups {
        let feats: Vec<&[f32]> = g.tracklet.detections.iter().map(|d| d.conv_feature.as_slice()).collect();
        let x = tape.constant(features_to_rows(&feats, input)?)?;
        let shops: Vec<&[f32]> = g.items().map(|(id, _)| feature(&lookup, id)).collect::<Result<_>>()?;
        let labels: Vec<f64> = g.items().map(|(_, l)| l).collect();
        let s = tape.constant(features_to_rows(&shops, input)?)?;

        let ex = mv.embed(tape, x)?;
        let agg = mv.aggregate(tape, ex, Fusion::Attention)?;
        let es = mv.embed(tape, s)?;
        let p = mv.score_rows(tape, es, agg)?;
        multi_terms.push(tape.bce(p, &labels)?);

        let fx = sv.embed(tape, x)?;
        let fs = sv.embed(tape, s)?;
        for (j, &label) in labels.iter().enumerate() {
            let pick = tape.constant(one_hot_row(shops.len(), j))?;
            let shop_row = tape.matmul(pick, fs)?;
            let p = sv.score_rows(tape, fx, shop_row)?;
            single_terms.push(tape.bce(p, &vec![label; g.tracklet.len()])?);
        }
    }
    let multi = sum_vars(tape, &multi_terms)?;
    let multi = tape.scale(multi, 1.0 / n_multi as f64)?;
    let single = sum_vars(tape, &single_terms)?;
    let single = tape.scale(single, 1.0 / n_single as f64)?;
    let wm = tape.scale(multi, multi_weight)?;
    let ws = tape.scale(single, single_weight)?;
    let total = tape.add(wm, ws)?;
    Ok(BatchLoss { multi, single, total })
}

fn one_hot_row(n: usize, j: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(1, n);
    t.set(0, j, 1.0);
    t
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub multi_loss: f64,
    pub single_loss: f64,
    pub positives: usize,
    pub skipped_records: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub heads: Heads,
    pub log: Vec<EpochLog>,
}

/// Pseudo-label training on target sequences. The multi-frame head starts
/// as a copy of `sf` with a seeded non-local block and attention layer; both
/// heads are updated. Pseudo-labels are rebuilt with the current single-frame
/// head before every step.
pub fn train_target(records: &[SequenceRecord], gallery: &[GalleryItem], sf: SingleFrameHead, cfg: &TrainConfig, jobs: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("training records"));
    }
    crate::io::check_pairings(records, gallery)?;
    let dims = sf.dims();
    let mut heads = Heads::from_single(sf, cfg.seed);
    let mut store = heads.to_params();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, STREAM_ORDER, 1 << 20 | epoch as u64));
        let (mut multi_sum, mut single_sum, mut steps) = (0.0, 0.0, 0usize);
        let (mut positives, mut skipped) = (0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SequenceRecord> = chunk.iter().map(|&i| records[i].clone()).collect();
            let (groups, skip) = make_pseudo_batch(&batch, gallery, &heads, cfg, step, jobs)?;
            step += 1;
            skipped += skip;
            positives += groups.len();
            if groups.is_empty() {
                continue;
            }
            let (m, s, grads) = batch_gradients(&store, &groups, gallery, cfg, jobs)
                .map_err(|e| at_step(e, epoch, step as usize - 1))?;
            multi_sum += m;
            single_sum += s;
            steps += 1;
            store.accumulate(&grads)?;
            sgd.step(&mut store).map_err(|e| at_step(e, epoch, step as usize - 1))?;
            heads = Heads::from_params(&store)?;
        }
        let denom = steps.max(1) as f64;
        let entry = EpochLog {
            epoch,
            multi_loss: multi_sum / denom,
            single_loss: single_sum / denom,
            positives,
            skipped_records: skipped,
        };
        log::info!(
            "epoch {epoch}: multi {:.5} single {:.5} positives {positives} skipped {skipped}",
            entry.multi_loss,
            entry.single_loss
        );
        log.push(entry);
    }
    heads.single = heads.single.with_inner(dims.inner);
    Ok(TrainOutcome { heads, log })
}

/// Loss values and summed gradients of a batch. Groups are split into
/// `jobs` contiguous shards with one tape each; shard results are combined
/// in shard order, so the result does not depend on scheduling.
fn batch_gradients(store: &ParamStore, groups: &[PseudoGroup], gallery: &[GalleryItem], cfg: &TrainConfig, jobs: usize) -> Result<(f64, f64, Gradients)> {
    let n_multi: usize = groups.iter().map(|g| 1 + g.negatives.len()).sum();
    let n_single: usize = groups.iter().map(|g| g.tracklet.len() * (1 + g.negatives.len())).sum();
    let shards: Vec<&[PseudoGroup]> = groups.chunks(groups.len().div_ceil(jobs.max(1))).collect();
    let parts = run_parallel(&shards, jobs, |_, shard| {
        let sm: usize = shard.iter().map(|g| 1 + g.negatives.len()).sum();
        let ss: usize = shard.iter().map(|g| g.tracklet.len() * (1 + g.negatives.len())).sum();
        // rescale the shard means to the batch means
        let wm = cfg.multi_weight * sm as f64 / n_multi as f64;
        let ws = cfg.single_weight * ss as f64 / n_single as f64;
        let mut tape = Tape::new();
        let l = batch_loss(&mut tape, store, shard, gallery, wm, ws)?;
        let grads = tape.backward(l.total)?;
        Ok((
            tape.scalar(l.multi) * sm as f64 / n_multi as f64,
            tape.scalar(l.single) * ss as f64 / n_single as f64,
            grads,
        ))
    })?;
    let mut iter = parts.into_iter();
    let (mut m, mut s, mut grads) = iter.next().expect("at least one shard");
    for (pm, ps, pg) in iter {
        m += pm;
        s += ps;
        for (name, g) in pg {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&g)?,
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    Ok((m, s, grads))
}

/// Central-difference check of the full training loss on a small synthetic
/// batch of `n_groups` tracklets with `t` frames each. The non-local block
/// output weights are drawn at random so its gradient path is exercised.
pub fn check_loss_gradients(t: usize, dims: HeadDims, n_groups: usize, seed: u64, eps: f64, tol: f64) -> Result<GradCheckReport> {
    if t == 0 || n_groups == 0 {
        return Err(Error::invalid("gradient check needs at least one frame and one group"));
    }
    let synth = SynthConfig {
        gallery_size: 8,
        n_sequences: n_groups,
        frames_per_sequence: t,
        feature_dim: dims.input,
        occlusion_rate: 0.0,
        seed,
        ..Default::default()
    };
    let gallery = generate_gallery(&synth)?;
    let seqs = generate_sequences(&gallery, &synth, "gc", 0)?;
    let mut heads = Heads::from_single(SingleFrameHead::new(dims, seed).with_inner(dims.inner), seed + 1);
    let mut rng = stream_rng(seed, STREAM_PRETRAIN, 1 << 20);
    let out_w = Tensor2::uniform(dims.inner, dims.embed, 0.3, &mut rng);
    heads.multi.nlb_mut().set_out_w(out_w)?;
    let groups: Vec<PseudoGroup> = seqs
        .iter()
        .map(|s| {
            let r = &s.record;
            let gt = r.gt_tracklet.clone().ok_or(Error::Empty("ground-truth tracklet"))?;
            Ok(PseudoGroup {
                sequence_id: r.sequence_id.clone(),
                tracklet: gt,
                positive: r.paired_item_ids[0].clone(),
                negatives: draw_negatives(&gallery.items, &r.paired_item_ids, 2, &mut rng),
            })
        })
        .collect::<Result<_>>()?;
    grad_check(
        &heads.to_params(),
        |tape, s| Ok(batch_loss(tape, s, &groups, &gallery.items, 1.0, 1.0)?.total),
        eps,
        tol,
    )
}
