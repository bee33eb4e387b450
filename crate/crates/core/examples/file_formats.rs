//! Writing and reading the on-disk formats: sequences, gallery, prototypes,
//! rankings and checkpoints.
//!
//! cargo run --release --example file_formats

use seam::eval::{rank_gallery, GalleryIndex, Method};
use seam::io;
use seam::synthetic::{generate_gallery, generate_sequences, SynthConfig};
use seam::{HeadDims, Heads, SingleFrameHead};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("seam-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cfg = SynthConfig {
        gallery_size: 10,
        n_sequences: 3,
        feature_dim: 8,
        ..Default::default()
    };
    let gallery = generate_gallery(&cfg)?;
    let records: Vec<_> = generate_sequences(&gallery, &cfg, "seq", 0)?.into_iter().map(|s| s.record).collect();

    io::save_gallery(&dir.join("shop.gal.jsonl"), &gallery.items)?;
    io::save_prototypes(&dir.join("shop.proto.jsonl"), &gallery.prototypes)?;
    io::save_dataset(&dir.join("street.seq.jsonl"), &records)?;
    let items = io::load_gallery(&dir.join("shop.gal.jsonl"))?;
    let back = io::load_dataset(&dir.join("street.seq.jsonl"))?;
    io::check_pairings(&back, &items)?;
    println!("{} items, {} sequences, round trip equal: {}", items.len(), back.len(), back == records);

    let dims = HeadDims { input: 8, embed: 4, inner: 2 };
    let heads = Heads::from_single(SingleFrameHead::new(dims, 0).with_inner(dims.inner), 1);
    let ckpt = dir.join("model.ckpt");
    io::save_checkpoint(&ckpt, &heads.to_params())?;
    let loaded = Heads::from_params(&io::load_checkpoint(&ckpt)?)?;
    let bytes = std::fs::metadata(&ckpt)?.len();
    println!("checkpoint {bytes} bytes, {} tensors", loaded.to_params().len());

    let index = GalleryIndex::build(&items, &loaded)?;
    let tracklet = back[0].gt_tracklet.as_ref().expect("target visible");
    let ranking = rank_gallery(&back[0].sequence_id, tracklet, &index, &loaded, Method::Seam)?;
    io::save_rankings(&dir.join("seam.rank.jsonl"), &[ranking.clone()])?;
    println!("ranking round trip equal: {}", io::load_rankings(&dir.join("seam.rank.jsonl"))? == vec![ranking]);

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
