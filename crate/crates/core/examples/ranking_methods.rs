//! One query tracklet ranked by every method.
//!
//! The single-frame head is pretrained on source pairs and the multi-frame
//! head is freshly initialised from it. The multi-frame methods fuse the
//! tracklet into one descriptor; the baselines pick or pool per-frame scores.
//!
//! cargo run --release --example ranking_methods

use seam::eval::{rank_gallery, GalleryIndex, Method};
use seam::synthetic::{generate_gallery, generate_sequences, generate_source, SynthConfig};
use seam::training::{pairs_from_records, pretrain_single, PretrainConfig};
use seam::{HeadDims, Heads};

fn main() -> seam::Result<()> {
    let cfg = SynthConfig {
        gallery_size: 40,
        n_sequences: 1,
        feature_dim: 32,
        noise_sigma: 0.8,
        degraded_rate: 0.3,
        ..Default::default()
    };
    let gallery = generate_gallery(&cfg)?;
    let seq = generate_sequences(&gallery, &cfg, "demo", 0)?.remove(0);
    let tracklet = seq.record.gt_tracklet.clone().expect("target visible");
    let truth = &seq.record.paired_item_ids[0];

    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let (src_items, src_records) = generate_source(&cfg, 40, 400)?;
    let pairs = pairs_from_records(&src_records, &src_items, 3, 0)?;
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, ..Default::default() })?;
    let heads = Heads::from_single(sf, 1);
    let index = GalleryIndex::build(&gallery.items, &heads)?;

    println!("query {} ({} frames), paired with {truth}", seq.record.sequence_id, tracklet.len());
    for m in Method::ALL {
        let r = rank_gallery(&seq.record.sequence_id, &tracklet, &index, &heads, m)?;
        let top: Vec<&str> = r.item_ids().take(3).collect();
        println!("{:<18} rank of truth {:>3}  top-3 {:?}", m.name(), r.rank_of(truth).unwrap_or(0), top);
    }
    Ok(())
}
