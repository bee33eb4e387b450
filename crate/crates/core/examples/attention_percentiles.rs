//! Where the trained multi-frame head looks.
//!
//! Only the first quarter of every target sequence shows the item; the rest
//! is clutter. After pseudo-label training the percentile curve of the
//! attention weights should peak early.
//!
//! cargo run --release --example attention_percentiles -- [seed]

use seam::attention::{curve_argmax, percentile_curve};
use seam::synthetic::{generate_gallery, generate_sequences, generate_source, SynthConfig};
use seam::tracking::TrackingConfig;
use seam::training::{pairs_from_records, pretrain_single, train_target, PretrainConfig, TrainConfig};
use seam::HeadDims;

fn main() -> seam::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let synth = SynthConfig {
        gallery_size: 50,
        n_sequences: 150,
        feature_dim: 32,
        noise_sigma: 0.3,
        distractor_rate: 0.0,
        occlusion_rate: 0.0,
        informative_span: Some((0.0, 0.25)),
        degraded_signal: 0.0,
        clutter_strength: 1.0,
        seed,
        ..Default::default()
    };
    let gallery = generate_gallery(&synth)?;
    let train: Vec<_> = generate_sequences(&gallery, &synth, "train", 0)?.into_iter().map(|s| s.record).collect();
    let test_cfg = SynthConfig { n_sequences: 50, ..synth.clone() };
    let test: Vec<_> = generate_sequences(&gallery, &test_cfg, "test", 1)?.into_iter().map(|s| s.record).collect();

    let (src_items, src_records) = generate_source(&synth, 50, 500)?;
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed)?;
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() })?;
    let tracking = TrackingConfig {
        propagation_threshold: 1e-6,
        pivot_match_threshold: 0.5,
        max_tracklets: 8,
    };
    let heads = train_target(&train, &gallery.items, sf, &TrainConfig { tracking, seed, ..Default::default() }, 1)?.heads;

    let curve = percentile_curve(&test, &heads, &tracking, 21, 1)?;
    let top = curve.iter().map(|p| p.mean).fold(0.0, f64::max);
    for p in &curve {
        let bar = "#".repeat((40.0 * p.mean / top).round() as usize);
        println!("{:5.1}%  {:.4} ± {:.4}  {bar}", p.percentile, p.mean, p.std);
    }
    let peak = curve_argmax(&curve).expect("non-empty curve");
    println!("peak at the {:.0}th percentile", curve[peak].percentile);
    Ok(())
}
