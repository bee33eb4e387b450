//! Tracklet building on a sequence with two people and passers-by.
//!
//! A single-frame head is pretrained on source pairs, then each tracklet is
//! printed as a row of frame cells: `A`/`B` for the two planted identities,
//! `x` for anything else, `.` where the tracklet skips the frame.
//!
//! cargo run --release --example tracklets -- [seed]

use seam::synthetic::{generate_gallery, generate_multi_identity_sequence, generate_source, stream_rng, tracklet_purity, SynthConfig};
use seam::tracking::{build_tracklets, TrackingConfig};
use seam::training::{pairs_from_records, pretrain_single, PretrainConfig};
use seam::HeadDims;

fn main() -> seam::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = SynthConfig {
        gallery_size: 50,
        feature_dim: 32,
        noise_sigma: 0.1,
        distractor_rate: 0.5,
        occlusion_rate: 0.1,
        seed,
        ..Default::default()
    };
    let gallery = generate_gallery(&cfg)?;
    let (src_items, src_records) = generate_source(&cfg, 50, 500)?;
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed)?;
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let (head, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() })?;

    let seq = generate_multi_identity_sequence(&gallery, &[3, 17], "two-people", &cfg, &mut stream_rng(seed, 99, 0))?;
    let (a, b) = (gallery.items[3].item_id.as_str(), gallery.items[17].item_id.as_str());
    let tracking = TrackingConfig { max_tracklets: 32, ..Default::default() };
    let tracklets = build_tracklets(&seq.record.frames, &head, &tracking)?;

    println!("{} frames, {} detections", seq.record.frames.len(), seq.record.num_detections());
    for t in &tracklets {
        let mut row = vec!['.'; seq.record.frames.len()];
        for d in &t.detections {
            row[d.frame_index] = match seq.label_of(d) {
                Some(l) if l == a => 'A',
                Some(l) if l == b => 'B',
                _ => 'x',
            };
        }
        let pivot = t.pivot_detection();
        println!(
            "tracklet {:2}  {}  pivot frame {:2} conf {:.2}",
            t.id,
            row.into_iter().collect::<String>(),
            pivot.frame_index,
            pivot.confidence
        );
    }
    println!("purity {:.3}", tracklet_purity(&tracklets, &seq, &[a, b]));
    Ok(())
}
