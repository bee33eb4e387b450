//! Tracklet construction by matching every detection against a pivot.
//!
//! At inference the pivot is the most confident detection still unassigned;
//! during training it is the detection that best matches the paired shop item.
//! In both cases each other frame contributes its best-matching detection, if
//! that score clears the propagation threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{Descriptor, SingleFrameHead};
use crate::types::{iou, Detection, Tracklet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub propagation_threshold: f64,
    pub pivot_match_threshold: f64,
    pub max_tracklets: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            propagation_threshold: 0.5,
            pivot_match_threshold: 0.7,
            max_tracklets: 8,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("propagation threshold", self.propagation_threshold),
            ("pivot threshold", self.pivot_match_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// `f(c)` for every detection, laid out like `frames`.
pub fn embed_frames(frames: &[Vec<Detection>], head: &SingleFrameHead) -> Result<Vec<Vec<Descriptor>>> {
    frames
        .iter()
        .map(|dets| {
            if dets.is_empty() {
                return Ok(Vec::new());
            }
            let feats: Vec<&[f32]> = dets.iter().map(|d| d.conv_feature.as_slice()).collect();
            let rows = head.embed_features(&feats)?;
            Ok((0..rows.rows()).map(|r| Descriptor::new(rows.row(r).to_vec())).collect())
        })
        .collect()
}

/// Inference-time tracklets: repeatedly take the most confident unassigned
/// detection as pivot and propagate from it. Stops when every detection is
/// assigned or `max_tracklets` tracklets exist.
pub fn build_tracklets(frames: &[Vec<Detection>], head: &SingleFrameHead, cfg: &TrackingConfig) -> Result<Vec<Tracklet>> {
    let descs = embed_frames(frames, head)?;
    build_tracklets_with_descriptors(frames, &descs, head, cfg)
}

/// [`build_tracklets`] on descriptors computed beforehand.
pub fn build_tracklets_with_descriptors(
    frames: &[Vec<Detection>],
    descs: &[Vec<Descriptor>],
    head: &SingleFrameHead,
    cfg: &TrackingConfig,
) -> Result<Vec<Tracklet>> {
    cfg.validate()?;
    check_layout(frames, descs)?;
    let mut assigned: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    let mut out = Vec::new();
    while out.len() < cfg.max_tracklets {
        let pivot = frames
            .iter()
            .enumerate()
            .flat_map(|(t, dets)| dets.iter().enumerate().map(move |(k, d)| (t, k, d)))
            .filter(|&(t, k, _)| !assigned[t][k])
            .max_by(|a, b| {
                a.2.confidence
                    .total_cmp(&b.2.confidence)
                    .then_with(|| b.2.key().cmp(&a.2.key()))
            })
            .map(|(t, k, _)| (t, k));
        let Some(pivot) = pivot else { break };
        let tracklet = propagate(out.len(), descs, &assigned, pivot, head, cfg.propagation_threshold)?;
        for d in &tracklet.members {
            assigned[d.0][d.1] = true;
        }
        out.push(tracklet.into_tracklet(frames)?);
    }
    Ok(out)
}

/// Training-time tracklet for a record paired with the item whose descriptor
/// is `shop`. `None` when no detection scores at least the pivot threshold.
pub fn build_training_tracklet(
    frames: &[Vec<Detection>],
    shop: &Descriptor,
    head: &SingleFrameHead,
    cfg: &TrackingConfig,
) -> Result<Option<Tracklet>> {
    let descs = embed_frames(frames, head)?;
    build_training_tracklet_with_descriptors(frames, &descs, shop, head, cfg)
}

pub fn build_training_tracklet_with_descriptors(
    frames: &[Vec<Detection>],
    descs: &[Vec<Descriptor>],
    shop: &Descriptor,
    head: &SingleFrameHead,
    cfg: &TrackingConfig,
) -> Result<Option<Tracklet>> {
    cfg.validate()?;
    check_layout(frames, descs)?;
    let mut best: Option<((usize, usize), f64)> = None;
    for (t, row) in descs.iter().enumerate() {
        for (k, d) in row.iter().enumerate() {
            let s = head.score(d.as_slice(), shop.as_slice())?;
            // strict comparison keeps the earliest detection on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some(((t, k), s));
            }
        }
    }
    let Some((pivot, score)) = best else { return Ok(None) };
    if score < cfg.pivot_match_threshold {
        return Ok(None);
    }
    let assigned: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    let p = propagate(0, descs, &assigned, pivot, head, cfg.propagation_threshold)?;
    Ok(Some(p.into_tracklet(frames)?))
}

struct Grown {
    id: usize,
    members: Vec<(usize, usize)>,
    pivot: (usize, usize),
}

impl Grown {
    fn into_tracklet(self, frames: &[Vec<Detection>]) -> Result<Tracklet> {
        let pivot = self.members.iter().position(|&m| m == self.pivot).expect("pivot is a member");
        let dets = self.members.iter().map(|&(t, k)| frames[t][k].clone()).collect();
        Tracklet::new(self.id, dets, pivot)
    }
}

fn propagate(
    id: usize,
    descs: &[Vec<Descriptor>],
    assigned: &[Vec<bool>],
    pivot: (usize, usize),
    head: &SingleFrameHead,
    threshold: f64,
) -> Result<Grown> {
    let p = descs[pivot.0][pivot.1].as_slice();
    let mut members = Vec::new();
    for (t, row) in descs.iter().enumerate() {
        if t == pivot.0 {
            members.push(pivot);
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, d) in row.iter().enumerate() {
            if assigned[t][k] {
                continue;
            }
            let s = head.score(p, d.as_slice())?;
            if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        if let Some((k, _)) = best {
            members.push((t, k));
        }
    }
    Ok(Grown { id, members, pivot })
}

fn check_layout(frames: &[Vec<Detection>], descs: &[Vec<Descriptor>]) -> Result<()> {
    if frames.len() != descs.len() || frames.iter().zip(descs).any(|(f, d)| f.len() != d.len()) {
        return Err(Error::invalid("descriptor layout does not match the frames"));
    }
    let mut last = None;
    for dets in frames {
        if let Some(d) = dets.first() {
            if dets.iter().any(|x| x.frame_index != d.frame_index) {
                return Err(Error::invalid(format!("frame {} mixes frame indices", d.frame_index)));
            }
            if last.is_some_and(|l| d.frame_index <= l) {
                return Err(Error::invalid(format!("frame index {} is out of order", d.frame_index)));
            }
            last = Some(d.frame_index);
        }
    }
    Ok(())
}

/// Mean IoU of `candidate` against `gt`, averaged over the frames of `gt`.
/// Frames the candidate misses contribute 0.
pub fn average_iou(candidate: &Tracklet, gt: &Tracklet) -> f64 {
    let total: f64 = gt
        .detections
        .iter()
        .map(|g| {
            candidate
                .detection_at_frame(g.frame_index)
                .map_or(0.0, |c| iou(&c.bbox, &g.bbox))
        })
        .sum();
    total / gt.len() as f64
}

/// The candidate with the highest average IoU against `gt`; ties go to the
/// lowest tracklet id.
pub fn select_eval_tracklet<'a>(tracklets: &'a [Tracklet], gt: &Tracklet) -> Option<(&'a Tracklet, f64)> {
    tracklets
        .iter()
        .map(|t| (t, average_iou(t, gt)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.id.cmp(&a.0.id)))
}
