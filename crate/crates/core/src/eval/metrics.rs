//! Top-K accuracy, bootstrap subsampling and per-class tables.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::synthetic::stream_rng;
use crate::types::ClothingClass;

/// What evaluation needs to know about one query: the 1-based rank of its
/// best-placed correct item, or `None` when it produced no ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub class: Option<ClothingClass>,
    pub correct_rank: Option<usize>,
}

/// Fraction of queries whose correct item sits within the first `k`, for each
/// `k` in `ks`. Queries without a ranking count as misses.
pub fn topk_accuracy(ranks: &[Option<usize>], ks: &[usize]) -> Result<Vec<f64>> {
    if ranks.is_empty() {
        return Err(Error::Empty("queries"));
    }
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KStat {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub pool_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            pool_size: 800,
            repeats: 20,
            seed: 0,
        }
    }
}

/// Mean and population standard deviation of top-K accuracy over `repeats`
/// subsamples of `min(pool_size, n)` queries drawn without replacement.
pub fn bootstrap_eval(ranks: &[Option<usize>], ks: &[usize], cfg: &BootstrapConfig) -> Result<Vec<KStat>> {
    if cfg.repeats == 0 || cfg.pool_size == 0 {
        return Err(Error::invalid("bootstrap needs a positive pool size and repeat count"));
    }
    if ranks.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let pool = cfg.pool_size.min(ranks.len());
    let mut rng = stream_rng(cfg.seed, 0, 1);
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    let mut runs: Vec<Vec<f64>> = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let sample: Vec<Option<usize>> = if pool == ranks.len() {
            ranks.to_vec()
        } else {
            let (chosen, _) = order.partial_shuffle(&mut rng, pool);
            chosen.iter().map(|&i| ranks[i]).collect()
        };
        runs.push(topk_accuracy(&sample, ks)?);
    }
    Ok(ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let vals: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            let (mean, std) = mean_std(&vals);
            KStat { k, mean, std }
        })
        .collect())
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() == 1 {
        return (vals[0], 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: ClothingClass,
    pub n_queries: usize,
    pub stats: Vec<KStat>,
}

/// Bootstrap statistics restricted to each class's queries. Classes without
/// queries are left out; rows follow the class taxonomy order.
pub fn per_class_report(outcomes: &[QueryOutcome], ks: &[usize], cfg: &BootstrapConfig) -> Result<Vec<ClassRow>> {
    let mut rows = Vec::new();
    for class in ClothingClass::ALL {
        let ranks: Vec<Option<usize>> = outcomes
            .iter()
            .filter(|o| o.class == Some(class))
            .map(|o| o.correct_rank)
            .collect();
        if ranks.is_empty() {
            continue;
        }
        rows.push(ClassRow {
            class,
            n_queries: ranks.len(),
            stats: bootstrap_eval(&ranks, ks, cfg)?,
        });
    }
    Ok(rows)
}
