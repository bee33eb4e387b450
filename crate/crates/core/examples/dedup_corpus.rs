//! Near-duplicate search on a synthetic corpus with planted duplicates.
//!
//! cargo run --release --example dedup_corpus -- [seed]

use std::collections::HashSet;
use std::time::Instant;

use seam::dedup::{dedup, generate_corpus, CorpusConfig, DedupConfig};

fn main() -> seam::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = generate_corpus(&CorpusConfig {
        seed,
        ..Default::default()
    })?;
    let start = Instant::now();
    let report = dedup(&corpus.images, &DedupConfig::default(), 4)?;
    let elapsed = start.elapsed();

    let key = |a: &str, b: &str| if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
    let truth: HashSet<_> = corpus.planted.iter().map(|p| key(&p.original, &p.duplicate)).collect();
    let mut found = HashSet::new();
    for g in report.groups.iter().filter(|g| g.len() > 1) {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                found.insert(key(&g[i], &g[j]));
            }
        }
    }
    let hits = found.intersection(&truth).count() as f64;
    println!("candidates      {}", report.candidates.len());
    println!("verified pairs  {}", found.len());
    println!("precision       {:.3}", hits / found.len().max(1) as f64);
    println!("recall          {:.3}", hits / truth.len() as f64);
    println!("elapsed         {:.2?}", elapsed);

    let mut worst_scale: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for p in &corpus.planted {
        let Some(v) = report
            .candidates
            .iter()
            .find(|v| key(&v.a, &v.b) == key(&p.original, &p.duplicate))
        else {
            println!("missed at hash stage: {} / {}", p.original, p.duplicate);
            continue;
        };
        let (Some(s), Some(tx), Some(ty)) = (v.scale, v.tx, v.ty) else {
            continue;
        };
        // the pair may be stored in either direction
        let (s, tx, ty) = if v.a == p.original {
            (s, tx, ty)
        } else {
            (1.0 / s, -tx / s, -ty / s)
        };
        worst_scale = worst_scale.max((s - p.transform.scale).abs());
        worst_shift = worst_shift.max((tx - p.transform.tx).hypot(ty - p.transform.ty));
    }
    println!("max |ds|        {worst_scale:.5}");
    println!("max |dt|        {worst_shift:.3} px");
    Ok(())
}
