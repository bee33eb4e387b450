//! The whole pipeline on a synthetic benchmark: source pretraining, target
//! pseudo-label training, then top-K accuracy of every method next to a
//! prototype oracle.
//!
//! Half of the target frames are degraded: the item is swapped for clutter
//! and the detector is less sure of it. Attention can learn to skip them.
//!
//! cargo run --release --example synthetic_benchmark -- [seed]

use std::time::Instant;

use seam::eval::{evaluate_method, prepare_queries, topk_accuracy, EvalConfig, GalleryIndex, Method};
use seam::synthetic::{generate_gallery, generate_sequences, generate_source, oracle_rank, SynthConfig};
use seam::tracking::TrackingConfig;
use seam::training::{pair_accuracy, pairs_from_records, pretrain_single, train_target, PretrainConfig, TrainConfig};
use seam::HeadDims;

fn main() -> seam::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();

    let synth = SynthConfig {
        gallery_size: 200,
        n_sequences: 500,
        feature_dim: 64,
        noise_sigma: 0.5,
        family_spread: 1.0,
        distractor_rate: 0.1,
        degraded_rate: 0.5,
        degraded_signal: 0.0,
        clutter_strength: 1.0,
        seed,
        ..Default::default()
    };
    let gallery = generate_gallery(&synth)?;
    let train: Vec<_> = generate_sequences(&gallery, &synth, "train", 0)?.into_iter().map(|s| s.record).collect();
    let test_cfg = SynthConfig { n_sequences: 100, ..synth.clone() };
    let test: Vec<_> = generate_sequences(&gallery, &test_cfg, "test", 1)?.into_iter().map(|s| s.record).collect();

    let (src_items, src_records) = generate_source(&synth, 200, 2000)?;
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed)?;
    let dims = HeadDims { input: 64, embed: 64, inner: 32 };
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() })?;
    println!("source pair accuracy  {:.3}", pair_accuracy(&sf, &pairs)?);

    let tracking = TrackingConfig {
        propagation_threshold: 1e-6,
        pivot_match_threshold: 0.5,
        max_tracklets: 8,
    };
    let cfg = TrainConfig { tracking, seed, ..Default::default() };
    let out = train_target(&train, &gallery.items, sf, &cfg, 1)?;
    for e in &out.log {
        println!(
            "epoch {:2}  multi {:.4}  single {:.4}  positives {}",
            e.epoch, e.multi_loss, e.single_loss, e.positives
        );
    }

    let eval_cfg = EvalConfig { tracking, seed, ..Default::default() };
    let queries = prepare_queries(&test, &gallery.items, &out.heads, &eval_cfg, 1)?;
    let index = GalleryIndex::build(&gallery.items, &out.heads)?;

    let oracle: Vec<Option<usize>> = queries
        .iter()
        .map(|q| {
            let t = q.tracklet.as_ref()?;
            let feats: Vec<&[f32]> = t.detections.iter().map(|d| d.conv_feature.as_slice()).collect();
            oracle_rank(&q.query_id, &feats, &gallery.prototypes).ok()?.best_rank_of(&q.item_ids)
        })
        .collect();
    let o = topk_accuracy(&oracle, &[1, 5])?;
    println!("{:<18} top-1 {:.3}  top-5 {:.3}", "oracle", o[0], o[1]);
    for m in Method::ALL {
        let r = evaluate_method(&queries, &index, &out.heads, m, &eval_cfg, 1)?;
        println!("{:<18} top-1 {:.3}  top-5 {:.3}", m.name(), r.stats[0].mean, r.stats[1].mean);
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
