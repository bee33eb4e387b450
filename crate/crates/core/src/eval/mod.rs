//! Retrieval evaluation: frame sampling, query tracklets, gallery ranking for
//! every method, and top-K statistics.

mod metrics;
mod rank;
mod rrs;

pub use metrics::{bootstrap_eval, per_class_report, topk_accuracy, BootstrapConfig, ClassRow, KStat, QueryOutcome};
pub use rank::{method_scores, rank_gallery, GalleryIndex, Method};
pub use rrs::{chunk_bounds, equally_spaced, rrs_sample, sample_clip};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heads::Heads;
use crate::synthetic::stream_rng;
use crate::tracking::{build_tracklets, select_eval_tracklet, TrackingConfig};
use crate::types::{ClothingClass, GalleryItem, Ranking, SequenceRecord, Tracklet};

const STREAM_QUERY: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Frames sampled per sequence.
    pub t: usize,
    pub ks: Vec<usize>,
    pub tracking: TrackingConfig,
    pub bootstrap: BootstrapConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            t: 10,
            ks: vec![1, 5, 10, 20],
            tracking: TrackingConfig::default(),
            bootstrap: BootstrapConfig::default(),
            seed: 0,
        }
    }
}

/// A street sequence reduced to the tracklet it is queried with.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub item_ids: Vec<String>,
    pub class: Option<ClothingClass>,
    /// `None` when the sampled clip holds no detection.
    pub tracklet: Option<Tracklet>,
}

/// Runs `f` on every element, on `jobs` threads when `jobs > 1`. Results keep
/// input order.
pub fn run_parallel<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    if jobs <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect())
}

/// The query tracklet of one record: RRS clip, inference tracking, then the
/// candidate that best overlaps the ground truth (restricted to the clip).
/// Without ground truth the first tracklet, grown from the most confident
/// detection, is used.
pub fn query_tracklet(record: &SequenceRecord, heads: &Heads, cfg: &EvalConfig, index: u64) -> Result<Option<Tracklet>> {
    let mut rng = stream_rng(cfg.seed, STREAM_QUERY, index);
    let clip = sample_clip(record, cfg.t, &mut rng)?;
    let tracklets = build_tracklets(&clip, &heads.single, &cfg.tracking)?;
    if tracklets.is_empty() {
        return Ok(None);
    }
    let gt_in_clip = record.gt_tracklet.as_ref().and_then(|gt| {
        let dets: Vec<_> = gt
            .detections
            .iter()
            .filter(|d| clip.iter().any(|f| f.first().is_some_and(|c| c.frame_index == d.frame_index)))
            .cloned()
            .collect();
        (!dets.is_empty()).then(|| Tracklet::new(gt.id, dets, 0)).transpose().ok().flatten()
    });
    Ok(Some(match gt_in_clip {
        Some(gt) => select_eval_tracklet(&tracklets, &gt).expect("non-empty").0.clone(),
        None => tracklets.into_iter().next().expect("non-empty"),
    }))
}

pub fn prepare_queries(
    records: &[SequenceRecord],
    gallery: &[GalleryItem],
    heads: &Heads,
    cfg: &EvalConfig,
    jobs: usize,
) -> Result<Vec<Query>> {
    let classes: HashMap<&str, ClothingClass> = gallery.iter().map(|g| (g.item_id.as_str(), g.class_label)).collect();
    run_parallel(records, jobs, |i, r| {
        Ok(Query {
            query_id: r.sequence_id.clone(),
            item_ids: r.paired_item_ids.clone(),
            class: r.paired_item_ids.first().and_then(|id| classes.get(id.as_str()).copied()),
            tracklet: query_tracklet(r, heads, cfg, i as u64)?,
        })
    })
}

/// One ranking per query; `None` where the query has no tracklet.
pub fn rank_queries(queries: &[Query], index: &GalleryIndex, heads: &Heads, method: Method, jobs: usize) -> Result<Vec<Option<Ranking>>> {
    run_parallel(queries, jobs, |_, q| {
        q.tracklet
            .as_ref()
            .map(|t| rank_gallery(&q.query_id, t, index, heads, method))
            .transpose()
    })
}

pub fn outcomes(queries: &[Query], rankings: &[Option<Ranking>]) -> Vec<QueryOutcome> {
    queries
        .iter()
        .zip(rankings)
        .map(|(q, r)| QueryOutcome {
            query_id: q.query_id.clone(),
            class: q.class,
            correct_rank: r.as_ref().and_then(|r| r.best_rank_of(&q.item_ids)),
        })
        .collect()
}

/// Bootstrap top-K statistics of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub n_queries: usize,
    pub stats: Vec<KStat>,
    pub outcomes: Vec<QueryOutcome>,
}

pub fn evaluate_method(queries: &[Query], index: &GalleryIndex, heads: &Heads, method: Method, cfg: &EvalConfig, jobs: usize) -> Result<MethodReport> {
    let rankings = rank_queries(queries, index, heads, method, jobs)?;
    let outcomes = outcomes(queries, &rankings);
    let ranks: Vec<Option<usize>> = outcomes.iter().map(|o| o.correct_rank).collect();
    Ok(MethodReport {
        method,
        n_queries: queries.len(),
        stats: bootstrap_eval(&ranks, &cfg.ks, &cfg.bootstrap)?,
        outcomes,
    })
}
