//! Where along a tracklet the multi-frame head puts its attention.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{equally_spaced, run_parallel};
use crate::heads::{features_to_rows, Heads, MultiFrameHead};
use crate::tracking::{build_tracklets, TrackingConfig};
use crate::types::{SequenceRecord, Tracklet};

/// Attention weight of every detection of `tracklet`, keyed by frame index.
pub fn attention_trace(tracklet: &Tracklet, head: &MultiFrameHead) -> Result<Vec<(usize, f64)>> {
    let feats: Vec<&[f32]> = tracklet.detections.iter().map(|d| d.conv_feature.as_slice()).collect();
    let seq = head.embed_features(&feats)?;
    let w = head.attend(&seq)?;
    Ok(tracklet
        .detections
        .iter()
        .map(|d| d.frame_index)
        .zip(w.into_vec())
        .collect())
}

/// One point of a percentile curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub percentile: f64,
    pub mean: f64,
    pub std: f64,
}

/// Weights of `n_samples` equally spaced detections of `tracklet`, attended
/// together. Short tracklets repeat detections.
pub fn sampled_weights(tracklet: &Tracklet, head: &MultiFrameHead, n_samples: usize) -> Result<Vec<f64>> {
    let idx = equally_spaced(tracklet.len(), n_samples)?;
    let feats: Vec<&[f32]> = idx
        .iter()
        .map(|&i| tracklet.detections[i].conv_feature.as_slice())
        .collect();
    let x = features_to_rows(&feats, head.dims().input)?;
    let seq = head.embed_rows(&x)?;
    Ok(head.attend(&seq)?.into_vec())
}

/// Mean and population standard deviation of the attention at each of
/// `n_samples` equally spaced positions, over records. A record contributes
/// its ground-truth tracklet, or else the first tracklet inferred with
/// `tracking`; records with no detections are skipped.
pub fn percentile_curve(
    records: &[SequenceRecord],
    heads: &Heads,
    tracking: &TrackingConfig,
    n_samples: usize,
    jobs: usize,
) -> Result<Vec<CurvePoint>> {
    if n_samples < 2 {
        return Err(Error::invalid("a percentile curve needs at least 2 samples"));
    }
    let rows = run_parallel(records, jobs, |_, r| {
        let tracklet = match &r.gt_tracklet {
            Some(gt) => gt.clone(),
            None => match build_tracklets(&r.frames, &heads.single, tracking)?.into_iter().next() {
                Some(t) => t,
                None => return Ok(None),
            },
        };
        sampled_weights(&tracklet, &heads.multi, n_samples).map(Some)
    })?;
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::Empty("records with a tracklet"));
    }
    let n = rows.len() as f64;
    Ok((0..n_samples)
        .map(|p| {
            let mean = rows.iter().map(|r| r[p]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / n;
            CurvePoint {
                percentile: 100.0 * p as f64 / (n_samples - 1) as f64,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Index of the largest mean, ties to the earliest position.
pub fn curve_argmax(curve: &[CurvePoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in curve.iter().enumerate() {
        if best.is_none_or(|b| p.mean > curve[b].mean) {
            best = Some(i);
        }
    }
    best
}
