//! Seeded feature-level data with planted ground truth.
//!
//! Every gallery item has a hidden unit-norm prototype. Items of the same
//! class share a class centre, so `family_spread` controls how alike they
//! look (1.0 means independent prototypes). Street detections are the
//! prototype plus isotropic Gaussian noise whose total norm is about
//! `noise_sigma`, whatever the feature dimension.
//!
//! Degraded frames (motion blur, occlusion by a hand, bad lighting) keep only
//! `degraded_signal` of the prototype and gain a shared clutter component of
//! norm `clutter_strength`. The detector is also less sure of them.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Prototype;
use crate::types::{BBox, ClothingClass, Detection, GalleryItem, Ranking, SequenceRecord, Tracklet};

const CANVAS: (f64, f64) = (640.0, 480.0);

const STREAM_CENTRES: u64 = 1;
const STREAM_ITEMS: u64 = 2;
const STREAM_GALLERY_NOISE: u64 = 3;
const STREAM_CLUTTER: u64 = 4;
const STREAM_SOURCE: u64 = 5;
const STREAM_SEQUENCES: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub gallery_size: usize,
    pub n_classes: usize,
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub distractor_rate: f64,
    pub occlusion_rate: f64,
    /// Probability that a target frame is degraded.
    pub degraded_rate: f64,
    /// When set, exactly the target frames whose relative position `t / N`
    /// falls outside `[start, end)` are degraded; `degraded_rate` is ignored.
    pub informative_span: Option<(f64, f64)>,
    pub degraded_signal: f64,
    pub clutter_strength: f64,
    pub family_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gallery_size: 200,
            n_classes: 13,
            n_sequences: 500,
            frames_per_sequence: 20,
            feature_dim: 1024,
            noise_sigma: 0.5,
            distractor_rate: 0.5,
            occlusion_rate: 0.1,
            degraded_rate: 0.0,
            informative_span: None,
            degraded_signal: 0.2,
            clutter_strength: 0.5,
            family_spread: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gallery_size == 0 || self.n_sequences == 0 || self.frames_per_sequence == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("synthetic counts must be positive"));
        }
        if self.n_classes == 0 || self.n_classes > ClothingClass::ALL.len() {
            return Err(Error::invalid(format!("n_classes must be in 1..=13, got {}", self.n_classes)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        for (name, v) in [
            ("distractor_rate", self.distractor_rate),
            ("occlusion_rate", self.occlusion_rate),
            ("degraded_rate", self.degraded_rate),
            ("family_spread", self.family_spread),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if let Some((a, b)) = self.informative_span {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return Err(Error::invalid(format!("informative span ({a}, {b}) is not a sub-interval of [0, 1]")));
            }
        }
        Ok(())
    }

    fn coord_sigma(&self) -> f64 {
        self.noise_sigma / (self.feature_dim as f64).sqrt()
    }
}

/// A deterministic generator for `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 40) | index);
    rng
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    base.iter()
        .map(|&b| {
            let n: f64 = rng.sample(StandardNormal);
            (b + sigma * n) as f32
        })
        .collect()
}

/// Gallery items with their hidden prototypes, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGallery {
    pub items: Vec<GalleryItem>,
    pub prototypes: Vec<Prototype>,
    index: HashMap<String, usize>,
}

impl SyntheticGallery {
    fn new(items: Vec<GalleryItem>, prototypes: Vec<Prototype>) -> Self {
        let index = items.iter().enumerate().map(|(i, g)| (g.item_id.clone(), i)).collect();
        Self { items, prototypes, index }
    }

    pub fn from_parts(items: Vec<GalleryItem>, prototypes: Vec<Prototype>) -> Result<Self> {
        if items.len() != prototypes.len() || items.iter().zip(&prototypes).any(|(g, p)| g.item_id != p.item_id) {
            return Err(Error::invalid("prototype table does not line up with the gallery"));
        }
        Ok(Self::new(items, prototypes))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn prototype(&self, item_id: &str) -> Option<&[f64]> {
        self.position(item_id).map(|i| self.prototypes[i].prototype.as_slice())
    }
}

fn make_prototypes(cfg: &SynthConfig, count: usize, domain: u64) -> Vec<Vec<f64>> {
    let mut centres_rng = stream_rng(cfg.seed, STREAM_CENTRES, domain);
    let centres: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| unit_vector(cfg.feature_dim, &mut centres_rng))
        .collect();
    let mut rng = stream_rng(cfg.seed, STREAM_ITEMS, domain);
    let rho = cfg.family_spread;
    let shared = (1.0 - rho * rho).max(0.0).sqrt();
    (0..count)
        .map(|j| {
            let r = unit_vector(cfg.feature_dim, &mut rng);
            let c = &centres[j % cfg.n_classes];
            let v: Vec<f64> = r.iter().zip(c).map(|(a, b)| rho * a + shared * b).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn make_items(cfg: &SynthConfig, protos: &[Vec<f64>], prefix: &str, domain: u64) -> Vec<GalleryItem> {
    let mut rng = stream_rng(cfg.seed, STREAM_GALLERY_NOISE, domain);
    let sigma = cfg.coord_sigma() / 4.0;
    protos
        .iter()
        .enumerate()
        .map(|(j, p)| GalleryItem {
            item_id: format!("{prefix}{j:04}"),
            class_label: ClothingClass::ALL[j % cfg.n_classes],
            conv_feature: noisy(p, sigma, &mut rng),
        })
        .collect()
}

/// `gallery_size` items: prototype plus noise at a quarter of the street
/// level, classes assigned round-robin.
pub fn generate_gallery(cfg: &SynthConfig) -> Result<SyntheticGallery> {
    cfg.validate()?;
    let protos = make_prototypes(cfg, cfg.gallery_size, 0);
    let items = make_items(cfg, &protos, "item-", 0);
    let prototypes = items
        .iter()
        .zip(protos)
        .map(|(g, p)| Prototype {
            item_id: g.item_id.clone(),
            prototype: p,
        })
        .collect();
    Ok(SyntheticGallery::new(items, prototypes))
}

/// The shared clutter direction of degraded frames, scaled to
/// `clutter_strength`.
pub fn clutter_vector(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, STREAM_CLUTTER, 0);
    unit_vector(cfg.feature_dim, &mut rng)
        .into_iter()
        .map(|x| x * cfg.clutter_strength)
        .collect()
}

/// A generated record plus the hidden truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub record: SequenceRecord,
    /// Source item of every detection, laid out like `record.frames`.
    pub labels: Vec<Vec<String>>,
    /// Whether the target in each frame was degraded.
    pub degraded: Vec<bool>,
}

impl SyntheticSequence {
    pub fn label_of(&self, det: &Detection) -> Option<&str> {
        self.labels
            .get(det.frame_index)
            .and_then(|l| l.get(det.det_index))
            .map(String::as_str)
    }
}

struct Walk {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl Walk {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let w = rng.random_range(60.0..160.0);
        let h = rng.random_range(80.0..240.0);
        Self {
            cx: rng.random_range(w / 2.0..CANVAS.0 - w / 2.0),
            cy: rng.random_range(h / 2.0..CANVAS.1 - h / 2.0),
            w,
            h,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> BBox {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        self.cx = (self.cx + 5.0 * dx).clamp(self.w / 2.0, CANVAS.0 - self.w / 2.0);
        self.cy = (self.cy + 5.0 * dy).clamp(self.h / 2.0, CANVAS.1 - self.h / 2.0);
        self.bbox()
    }

    fn bbox(&self) -> BBox {
        BBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
        .expect("walk keeps a positive box")
    }
}

fn is_degraded(cfg: &SynthConfig, t: usize, rng: &mut ChaCha8Rng) -> bool {
    match cfg.informative_span {
        Some((a, b)) => {
            let pos = t as f64 / cfg.frames_per_sequence as f64;
            !(a <= pos && pos < b)
        }
        None => cfg.degraded_rate > 0.0 && rng.random::<f64>() < cfg.degraded_rate,
    }
}

/// A sequence of `frames_per_sequence` frames paired with item `target`.
pub fn generate_sequence(
    gallery: &SyntheticGallery,
    target: usize,
    sequence_id: &str,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSequence> {
    generate_multi_identity_sequence(gallery, &[target], sequence_id, cfg, rng)
}

/// Like [`generate_sequence`] with several planted identities moving
/// independently; the record is paired with the first one and its ground
/// truth tracklet follows the first one.
pub fn generate_multi_identity_sequence(
    gallery: &SyntheticGallery,
    targets: &[usize],
    sequence_id: &str,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSequence> {
    cfg.validate()?;
    if targets.is_empty() || targets.iter().any(|&t| t >= gallery.len()) {
        return Err(Error::invalid("target items must be valid gallery positions"));
    }
    if gallery.prototypes[0].prototype.len() != cfg.feature_dim {
        return Err(Error::invalid("gallery feature dimension differs from the config"));
    }
    let sigma = cfg.coord_sigma();
    let clutter = clutter_vector(cfg);
    let poisson = if cfg.distractor_rate > 0.0 {
        Some(Poisson::new(cfg.distractor_rate).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut walks: Vec<Walk> = targets.iter().map(|_| Walk::new(rng)).collect();
    let mut frames = Vec::with_capacity(cfg.frames_per_sequence);
    let mut labels = Vec::with_capacity(cfg.frames_per_sequence);
    let mut degraded_flags = Vec::with_capacity(cfg.frames_per_sequence);
    let mut gt = Vec::new();

    for t in 0..cfg.frames_per_sequence {
        let mut dets: Vec<(Detection, String, bool)> = Vec::new();
        let degraded = is_degraded(cfg, t, rng);
        degraded_flags.push(degraded);
        for (n, (&item, walk)) in targets.iter().zip(walks.iter_mut()).enumerate() {
            let bbox = walk.step(rng);
            if rng.random::<f64>() < cfg.occlusion_rate {
                continue;
            }
            let proto = &gallery.prototypes[item].prototype;
            let base: Vec<f64> = if degraded {
                proto
                    .iter()
                    .zip(&clutter)
                    .map(|(p, c)| cfg.degraded_signal * p + c)
                    .collect()
            } else {
                proto.clone()
            };
            let det = Detection {
                frame_index: t,
                det_index: 0,
                bbox,
                confidence: if degraded { rng.random_range(0.4..0.9) } else { rng.random_range(0.5..1.0) },
                conv_feature: noisy(&base, sigma, rng),
            };
            dets.push((det, gallery.items[item].item_id.clone(), n == 0));
        }
        let n_distractors = poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
        for _ in 0..n_distractors {
            let other = loop {
                let j = rng.random_range(0..gallery.len());
                if gallery.len() == 1 || !targets.contains(&j) {
                    break j;
                }
            };
            let det = Detection {
                frame_index: t,
                det_index: 0,
                bbox: Walk::new(rng).bbox(),
                confidence: rng.random_range(0.2..0.8),
                conv_feature: noisy(&gallery.prototypes[other].prototype, sigma, rng),
            };
            dets.push((det, gallery.items[other].item_id.clone(), false));
        }
        dets.shuffle(rng);
        let mut frame = Vec::with_capacity(dets.len());
        let mut frame_labels = Vec::with_capacity(dets.len());
        for (k, (mut det, label, is_gt)) in dets.into_iter().enumerate() {
            det.det_index = k;
            if is_gt {
                gt.push(det.clone());
            }
            frame.push(det);
            frame_labels.push(label);
        }
        frames.push(frame);
        labels.push(frame_labels);
    }

    let gt_tracklet = if gt.is_empty() {
        None
    } else {
        let pivot = (0..gt.len())
            .max_by(|&a, &b| gt[a].confidence.total_cmp(&gt[b].confidence).then(b.cmp(&a)))
            .expect("non-empty");
        Some(Tracklet::new(0, gt, pivot)?)
    };
    Ok(SyntheticSequence {
        record: SequenceRecord {
            sequence_id: sequence_id.to_string(),
            paired_item_ids: vec![gallery.items[targets[0]].item_id.clone()],
            frames,
            gt_tracklet,
        },
        labels,
        degraded: degraded_flags,
    })
}

/// `n_sequences` records named `{prefix}-{i:05}`, each paired with a
/// uniformly drawn item. Record `i` only depends on `(seed, split, i)`.
pub fn generate_sequences(gallery: &SyntheticGallery, cfg: &SynthConfig, prefix: &str, split: u64) -> Result<Vec<SyntheticSequence>> {
    cfg.validate()?;
    (0..cfg.n_sequences)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, STREAM_SEQUENCES + split, i as u64);
            let target = rng.random_range(0..gallery.len());
            generate_sequence(gallery, target, &format!("{prefix}-{i:05}"), cfg, &mut rng)
        })
        .collect()
}

/// Source-domain pretraining data: a separate catalogue of `n_items` items
/// and `n_images` single-detection street images, each paired with one item.
/// Source images are never degraded.
pub fn generate_source(cfg: &SynthConfig, n_items: usize, n_images: usize) -> Result<(Vec<GalleryItem>, Vec<SequenceRecord>)> {
    cfg.validate()?;
    if n_items < 2 || n_images == 0 {
        return Err(Error::invalid("source data needs at least two items and one image"));
    }
    let protos = make_prototypes(cfg, n_items, 1);
    let items = make_items(cfg, &protos, "src-item-", 1);
    let sigma = cfg.coord_sigma();
    let records = (0..n_images)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, STREAM_SOURCE, i as u64);
            let j = rng.random_range(0..n_items);
            let det = Detection {
                frame_index: 0,
                det_index: 0,
                bbox: Walk::new(&mut rng).bbox(),
                confidence: rng.random_range(0.5..1.0),
                conv_feature: noisy(&protos[j], sigma, &mut rng),
            };
            SequenceRecord {
                sequence_id: format!("src-{i:05}"),
                paired_item_ids: vec![items[j].item_id.clone()],
                frames: vec![vec![det.clone()]],
                gt_tracklet: Some(Tracklet::new(0, vec![det], 0).expect("one detection")),
            }
        })
        .collect();
    Ok((items, records))
}

/// Scores every item by `1 / (1 + d)` where `d` is the mean Euclidean
/// distance from its prototype to the given features. Never touches a model.
pub fn oracle_rank(query_id: &str, features: &[&[f32]], prototypes: &[Prototype]) -> Result<Ranking> {
    if features.is_empty() {
        return Err(Error::Empty("oracle query features"));
    }
    let scores = prototypes
        .iter()
        .map(|p| {
            if features.iter().any(|f| f.len() != p.prototype.len()) {
                return Err(Error::invalid("feature and prototype dimensions differ"));
            }
            let mean = features
                .iter()
                .map(|f| {
                    f.iter()
                        .zip(&p.prototype)
                        .map(|(&a, b)| (a as f64 - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / features.len() as f64;
            Ok((p.item_id.clone(), 1.0 / (1.0 + mean)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ranking::from_scores(query_id, scores))
}

/// Stratified train/test split of record positions by the class of the first
/// paired item: within each class `round(n · test_fraction)` records go to
/// test, chosen by a seeded shuffle. Both halves come back sorted.
pub fn split_by_class(
    records: &[SequenceRecord],
    gallery: &[GalleryItem],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::invalid("test fraction must be in [0, 1]"));
    }
    let classes: HashMap<&str, ClothingClass> = gallery.iter().map(|g| (g.item_id.as_str(), g.class_label)).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ClothingClass::ALL.len()];
    for (i, r) in records.iter().enumerate() {
        let id = &r.paired_item_ids[0];
        let class = classes
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("sequence {} is paired with unknown item {id}", r.sequence_id)))?;
        by_class[*class as usize].push(i);
    }
    let mut rng = stream_rng(seed, 0, 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Fraction of detections of the planted `identities` that sit in a tracklet
/// whose majority identity (over planted detections) is their own.
/// Unassigned detections count as misplaced.
pub fn tracklet_purity(tracklets: &[Tracklet], seq: &SyntheticSequence, identities: &[&str]) -> f64 {
    let total = seq
        .labels
        .iter()
        .flatten()
        .filter(|l| identities.contains(&l.as_str()))
        .count();
    if total == 0 {
        return 1.0;
    }
    let mut correct = 0;
    for t in tracklets {
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for d in &t.detections {
            if let Some(l) = seq.label_of(d).filter(|l| identities.contains(l)) {
                match counts.iter_mut().find(|(x, _)| *x == l) {
                    Some(c) => c.1 += 1,
                    None => counts.push((l, 1)),
                }
            }
        }
        if let Some(&(_, best)) = counts.iter().max_by_key(|c| c.1) {
            correct += best;
        }
    }
    correct as f64 / total as f64
}
