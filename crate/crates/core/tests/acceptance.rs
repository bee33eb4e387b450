//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::HashSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use seam::attention::{curve_argmax, percentile_curve};
use seam::dedup::{dedup, generate_corpus, CorpusConfig, DedupConfig};
use seam::eval::{
    bootstrap_eval, evaluate_method, prepare_queries, rank_gallery, rrs_sample, BootstrapConfig, EvalConfig, GalleryIndex, Method,
};
use seam::heads::Fusion;
use seam::numerics::{grad_check, ParamStore, Tape, Tensor2, Var};
use seam::synthetic::{
    generate_gallery, generate_multi_identity_sequence, generate_sequences, generate_source, oracle_rank, stream_rng,
    tracklet_purity, SynthConfig,
};
use seam::tracking::{build_tracklets, build_tracklets_with_descriptors, embed_frames, TrackingConfig};
use seam::training::{check_loss_gradients, pairs_from_records, pretrain_single, train_target, PretrainConfig, TrainConfig};
use seam::{BBox, Detection, GalleryItem, HeadDims, Heads, SingleFrameHead, Tracklet};

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {n:2} {verdict} {name}: {detail}");
}

fn random_heads(dims: HeadDims, seed: u64) -> Heads {
    let mut heads = Heads::from_single(SingleFrameHead::new(dims, seed).with_inner(dims.inner), seed + 1);
    let mut rng = stream_rng(seed, 900, 0);
    heads
        .multi
        .nlb_mut()
        .set_out_w(Tensor2::uniform(dims.inner, dims.embed, 0.5, &mut rng))
        .unwrap();
    heads
}

fn random_feature(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_tracklet(len: usize, dim: usize, rng: &mut impl Rng) -> Tracklet {
    let dets = (0..len)
        .map(|t| Detection {
            frame_index: t,
            det_index: 0,
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            confidence: rng.random_range(0.0..1.0),
            conv_feature: random_feature(dim, rng),
        })
        .collect();
    Tracklet::new(0, dets, 0).unwrap()
}

fn random_frames(t: usize, per_frame: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<Detection>> {
    (0..t)
        .map(|f| {
            (0..per_frame)
                .map(|k| {
                    let x = rng.random_range(0.0..500.0);
                    let y = rng.random_range(0.0..400.0);
                    Detection {
                        frame_index: f,
                        det_index: k,
                        bbox: BBox::new(x, y, x + 60.0, y + 80.0).unwrap(),
                        confidence: rng.random_range(0.0..1.0),
                        conv_feature: random_feature(dim, rng),
                    }
                })
                .collect()
        })
        .collect()
}

fn random_gallery(k: usize, dim: usize, rng: &mut impl Rng) -> Vec<GalleryItem> {
    (0..k)
        .map(|j| GalleryItem {
            item_id: format!("item-{j:04}"),
            class_label: seam::ClothingClass::ALL[j % 13],
            conv_feature: random_feature(dim, rng),
        })
        .collect()
}

fn rows(feats: &[Vec<f32>]) -> Tensor2 {
    let r: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().map(|&v| v as f64).collect()).collect();
    Tensor2::from_rows(&r).unwrap()
}

#[test]
fn c01_gradient_fidelity() {
    let start = Instant::now();
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let full = check_loss_gradients(4, dims, 3, 0, 1e-5, 1e-4).unwrap();
    let elapsed = start.elapsed();

    let mut rng = stream_rng(1, 0, 0);
    let mut worst_op: (f64, &str) = (0.0, "");
    for (name, op) in per_op_losses() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor2::uniform(3, 4, 1.0, &mut rng));
        store.insert("b", Tensor2::uniform(4, 3, 1.0, &mut rng));
        store.insert("r", Tensor2::uniform(1, 4, 1.0, &mut rng));
        store.insert("p", Tensor2::from_vec(4, 1, (0..4).map(|_| rng.random_range(0.2..0.8)).collect()).unwrap());
        let weights = Tensor2::uniform(3, 4, 1.0, &mut rng);
        let rep = grad_check(
            &store,
            |tape, s| {
                let out = op(tape, s)?;
                if tape.value(out).shape() == (1, 1) {
                    return Ok(out);
                }
                let w = tape.constant(weights.clone())?;
                let wp = tape.mul(out, w)?;
                tape.sum(wp)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed(), "{name}: {rep:?}");
        if rep.max_rel_err() >= worst_op.0 {
            worst_op = (rep.max_rel_err(), name);
        }
    }

    let pass = full.passed() && full.max_rel_err() <= 1e-4 && elapsed < Duration::from_secs(10);
    report(
        1,
        "gradient fidelity",
        pass,
        &format!(
            "loss max rel err {:.2e} in {:.2?}, worst op {} at {:.2e}",
            full.max_rel_err(),
            elapsed,
            worst_op.1,
            worst_op.0
        ),
    );
    assert!(pass, "{full:?}");
}

type OpLoss = fn(&mut Tape, &ParamStore) -> seam::Result<Var>;

/// Every tape operation applied to parameters; results are 3x4 or scalar.
fn per_op_losses() -> Vec<(&'static str, OpLoss)> {
    vec![
        ("matmul", |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            let ab = t.matmul(a, b)?;
            t.matmul(ab, a)
        }),
        ("matmul_nt", |t, s| {
            let a = t.param(s, "a")?;
            let aa = t.matmul_nt(a, a)?;
            t.matmul(aa, a)
        }),
        ("add_row", |t, s| {
            let (a, r) = (t.param(s, "a")?, t.param(s, "r")?);
            t.add_row(a, r)
        }),
        ("sub_row", |t, s| {
            let (a, r) = (t.param(s, "a")?, t.param(s, "r")?);
            let d = t.sub_row(a, r)?;
            t.mul(d, d)
        }),
        ("linear", |t, s| {
            let (a, b, r) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "r")?);
            let ab = t.matmul(a, b)?;
            let bt = t.transpose(b)?;
            t.linear(ab, bt, r)
        }),
        ("add", |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let bt = t.transpose(b)?;
            t.add(a, bt)
        }),
        ("sub", |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let bt = t.transpose(b)?;
            let d = t.sub(a, bt)?;
            t.mul(d, a)
        }),
        ("scale", |t, s| {
            let a = t.param(s, "a")?;
            t.scale(a, -2.5)
        }),
        ("sigmoid", |t, s| {
            let a = t.param(s, "a")?;
            let a = t.scale(a, 3.0)?;
            t.sigmoid(a)
        }),
        ("softmax_rows", |t, s| {
            let a = t.param(s, "a")?;
            let a = t.scale(a, 2.0)?;
            t.softmax_rows(a)
        }),
        ("mean", |t, s| {
            let a = t.param(s, "a")?;
            let sq = t.mul(a, a)?;
            t.mean(sq)
        }),
        ("bce", |t, s| {
            let p = t.param(s, "p")?;
            t.bce(p, &[1.0, 0.0, 1.0, 0.0])
        }),
    ]
}

#[test]
fn c02_attention_normalization() {
    let dims = HeadDims { input: 24, embed: 12, inner: 6 };
    let mut rng = stream_rng(2, 0, 0);
    let (mut worst_sum, mut min_w) = (0.0f64, f64::INFINITY);
    for i in 0..1000 {
        let heads = random_heads(dims, (i / 100) as u64);
        let len = rng.random_range(1..=20);
        let feats: Vec<Vec<f32>> = (0..len).map(|_| random_feature(24, &mut rng)).collect();
        let seq = heads.multi.embed_rows(&rows(&feats)).unwrap();
        for w in [heads.multi.attend(&seq).unwrap(), heads.multi.attend_without_nlb(&seq).unwrap()] {
            worst_sum = worst_sum.max((w.as_slice().iter().sum::<f64>() - 1.0).abs());
            min_w = w.as_slice().iter().copied().fold(min_w, f64::min);
        }
    }
    let pass = worst_sum <= 1e-6 && min_w >= 0.0;
    report(2, "attention normalization", pass, &format!("max |sum - 1| {worst_sum:.1e}, min weight {min_w:.2e}"));
    assert!(pass);
}

#[test]
fn c03_permutation_invariance() {
    let dims = HeadDims { input: 24, embed: 12, inner: 6 };
    let heads = random_heads(dims, 3);
    let mut rng = stream_rng(3, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(2..=20);
        let feats: Vec<Vec<f32>> = (0..len).map(|_| random_feature(24, &mut rng)).collect();
        let base = heads.multi.aggregate(&heads.multi.embed_rows(&rows(&feats)).unwrap()).unwrap();
        for _ in 0..20 {
            let mut perm = feats.clone();
            perm.shuffle(&mut rng);
            let h = heads.multi.aggregate(&heads.multi.embed_rows(&rows(&perm)).unwrap()).unwrap();
            for (a, b) in base.as_slice().iter().zip(h.as_slice()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst <= 1e-9;
    report(3, "permutation invariance", pass, &format!("max deviation {worst:.1e}"));
    assert!(pass);
}

#[test]
fn c04_single_frame_degeneracy() {
    let dims = HeadDims { input: 24, embed: 12, inner: 6 };
    let mut rng = stream_rng(4, 0, 0);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let sf = SingleFrameHead::new(dims, i / 50).with_inner(dims.inner);
        let heads = Heads::from_single(sf, 10_000 + i);
        let (x, shop) = (random_feature(24, &mut rng), random_feature(24, &mut rng));
        let single = heads
            .single
            .score(heads.single.embed(&x).unwrap().as_slice(), heads.single.embed(&shop).unwrap().as_slice())
            .unwrap();
        let h = heads.multi.aggregate(&heads.multi.embed_features(&[&x]).unwrap()).unwrap();
        let multi = heads.multi.score(h.as_slice(), heads.multi.embed(&shop).unwrap().as_slice()).unwrap();
        worst = worst.max((single - multi).abs());
    }
    let pass = worst <= 1e-9;
    report(4, "single-frame degeneracy", pass, &format!("max |match_multi - match_single| {worst:.1e}"));
    assert!(pass);
}

#[test]
fn c05_synthetic_ordering() {
    let start = Instant::now();
    let seed = 0;
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
    let gallery = generate_gallery(&synth).unwrap();
    let train: Vec<_> = generate_sequences(&gallery, &synth, "train", 0).unwrap().into_iter().map(|s| s.record).collect();
    let test_cfg = SynthConfig { n_sequences: 100, ..synth.clone() };
    let test: Vec<_> = generate_sequences(&gallery, &test_cfg, "test", 1).unwrap().into_iter().map(|s| s.record).collect();

    let (src_items, src_records) = generate_source(&synth, 200, 2000).unwrap();
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed).unwrap();
    let dims = HeadDims { input: 64, embed: 64, inner: 32 };
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() }).unwrap();

    let tracking = TrackingConfig {
        propagation_threshold: 1e-6,
        pivot_match_threshold: 0.5,
        max_tracklets: 8,
    };
    let cfg = TrainConfig { tracking, seed, ..Default::default() };
    let heads = train_target(&train, &gallery.items, sf, &cfg, 1).unwrap().heads;

    let eval_cfg = EvalConfig { tracking, seed, ..Default::default() };
    let queries = prepare_queries(&test, &gallery.items, &heads, &eval_cfg, 1).unwrap();
    let index = GalleryIndex::build(&gallery.items, &heads).unwrap();
    let top = |m: Method| {
        let r = evaluate_method(&queries, &index, &heads, m, &eval_cfg, 1).unwrap();
        (r.stats[0].mean, r.stats[1].mean)
    };
    let (seam1, seam5) = top(Method::Seam);
    let (avg1, _) = top(Method::AvgDescriptor);
    let (conf1, _) = top(Method::MaxConfidence);
    let oracle_hits = queries
        .iter()
        .filter(|q| {
            q.tracklet.as_ref().is_some_and(|t| {
                let feats: Vec<&[f32]> = t.detections.iter().map(|d| d.conv_feature.as_slice()).collect();
                oracle_rank(&q.query_id, &feats, &gallery.prototypes).unwrap().best_rank_of(&q.item_ids) == Some(1)
            })
        })
        .count();
    let elapsed = start.elapsed();

    let pass = seam1 >= avg1 && avg1 >= conf1 && seam1 >= 0.90 && seam5 >= 0.98 && elapsed <= Duration::from_secs(300);
    report(
        5,
        "synthetic end-to-end ordering",
        pass,
        &format!(
            "seam top-1 {seam1:.2} top-5 {seam5:.2}, avg_descriptor {avg1:.2}, max_confidence {conf1:.2}, oracle {:.2}, {:.1?}",
            oracle_hits as f64 / queries.len() as f64,
            elapsed
        ),
    );
    assert!(pass);
}

/// Recomputes each score from the head outputs of a single item and sorts.
fn naive_ranking(t: &Tracklet, gallery: &[GalleryItem], heads: &Heads, method: Method) -> Vec<String> {
    let feats: Vec<Vec<f32>> = t.detections.iter().map(|d| d.conv_feature.clone()).collect();
    let (sf, mf) = (&heads.single, &heads.multi);
    let per_frame: Vec<Vec<f64>> = feats.iter().map(|f| sf.embed(f).unwrap().into_vec()).collect();
    let mut scored: Vec<(String, f64)> = gallery
        .iter()
        .map(|g| {
            let shop_s = sf.embed(&g.conv_feature).unwrap().into_vec();
            let shop_m = mf.embed(&g.conv_feature).unwrap().into_vec();
            let fused = |fusion| {
                let seq = mf.embed_rows(&rows(&feats)).unwrap();
                mf.score(mf.fuse(&seq, fusion).unwrap().as_slice(), &shop_m).unwrap()
            };
            let s = match method {
                Method::Seam => fused(Fusion::Attention),
                Method::SeamNoNlb => fused(Fusion::AttentionWithoutNlb),
                Method::SeamNoNlbNoG => fused(Fusion::Mean),
                Method::MaxConfidence => {
                    let mut best = 0;
                    for (i, d) in t.detections.iter().enumerate() {
                        if d.confidence > t.detections[best].confidence {
                            best = i;
                        }
                    }
                    sf.score(&per_frame[best], &shop_s).unwrap()
                }
                Method::MaxMatching => per_frame.iter().map(|d| sf.score(d, &shop_s).unwrap()).fold(f64::NEG_INFINITY, f64::max),
                Method::AvgDistance => {
                    per_frame.iter().map(|d| sf.score(d, &shop_s).unwrap()).sum::<f64>() / per_frame.len() as f64
                }
                Method::AvgDescriptor => {
                    let mut mean = vec![0.0; per_frame[0].len()];
                    for d in &per_frame {
                        for (m, v) in mean.iter_mut().zip(d) {
                            *m += v;
                        }
                    }
                    let n = per_frame.len() as f64;
                    let mean: Vec<f64> = mean.into_iter().map(|m| m / n).collect();
                    sf.score(&mean, &shop_s).unwrap()
                }
            };
            (g.item_id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(id, _)| id).collect()
}

#[test]
fn c06_ranking_oracle_equivalence() {
    let dims = HeadDims { input: 16, embed: 8, inner: 4 };
    let heads = random_heads(dims, 6);
    let mut rng = stream_rng(6, 0, 0);
    let gallery = random_gallery(50, 16, &mut rng);
    let index = GalleryIndex::build(&gallery, &heads).unwrap();
    let mut mismatches = 0;
    for q in 0..50 {
        let t = random_tracklet(rng.random_range(1..=10), 16, &mut rng);
        for m in Method::ALL {
            let fast: Vec<String> = rank_gallery(&format!("q{q}"), &t, &index, &heads, m)
                .unwrap()
                .item_ids()
                .map(String::from)
                .collect();
            if fast != naive_ranking(&t, &gallery, &heads, m) {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0;
    report(6, "ranking oracle equivalence", pass, &format!("{mismatches} of 350 rankings differ"));
    assert!(pass);
}

fn purity_run(seed: u64) -> (f64, Vec<Vec<Tracklet>>) {
    let cfg = SynthConfig {
        gallery_size: 50,
        n_sequences: 1,
        feature_dim: 32,
        noise_sigma: 0.1,
        distractor_rate: 0.5,
        occlusion_rate: 0.1,
        seed,
        ..Default::default()
    };
    let gallery = generate_gallery(&cfg).unwrap();
    let (src_items, src_records) = generate_source(&cfg, 50, 500).unwrap();
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed).unwrap();
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() }).unwrap();
    let tracking = TrackingConfig { max_tracklets: 64, ..Default::default() };
    let (mut correct, mut total) = (0.0, 0usize);
    let mut all = Vec::new();
    for i in 0..20 {
        let mut rng = stream_rng(seed, 700, i);
        let ids = rand::seq::index::sample(&mut rng, gallery.len(), 2).into_vec();
        let seq = generate_multi_identity_sequence(&gallery, &ids, &format!("m{i}"), &cfg, &mut rng).unwrap();
        let names: Vec<&str> = ids.iter().map(|&j| gallery.items[j].item_id.as_str()).collect();
        let n = seq.labels.iter().flatten().filter(|l| names.contains(&l.as_str())).count();
        let tracklets = build_tracklets(&seq.record.frames, &sf, &tracking).unwrap();
        correct += tracklet_purity(&tracklets, &seq, &names) * n as f64;
        total += n;
        all.push(tracklets);
    }
    (correct / total as f64, all)
}

#[test]
fn c07_tracklet_purity() {
    let (purity, first) = purity_run(7);
    let (again, second) = purity_run(7);
    let pass = purity >= 0.95 && purity == again && first == second;
    report(7, "tracklet purity", pass, &format!("{:.1}% of identity detections correctly placed, deterministic {}", 100.0 * purity, first == second));
    assert!(pass);
}

/// Seconds per call of each job: the best of `rounds` batches of at least
/// `batch` wall time, with the jobs interleaved so a busy machine slows all
/// of them alike.
fn time_interleaved(jobs: &mut [Box<dyn FnMut() + '_>], rounds: usize, batch: Duration) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; jobs.len()];
    for _ in 0..rounds {
        for (job, b) in jobs.iter_mut().zip(&mut best) {
            let start = Instant::now();
            let mut reps = 0u32;
            while start.elapsed() < batch {
                job();
                reps += 1;
            }
            *b = b.min(start.elapsed().as_secs_f64() / reps as f64);
        }
    }
    best
}

#[test]
fn c08_performance_bound() {
    let heads = random_heads(HeadDims::default(), 8);
    let mut rng = stream_rng(8, 0, 0);
    let gallery = random_gallery(1000, 1024, &mut rng);
    let frames = random_frames(10, 5, 1024, &mut rng);
    let tracking = TrackingConfig {
        propagation_threshold: 1e-6,
        pivot_match_threshold: 0.5,
        max_tracklets: 64,
    };

    let start = Instant::now();
    let index = GalleryIndex::build(&gallery, &heads).unwrap();
    let tracklets = build_tracklets(&frames, &heads.single, &tracking).unwrap();
    for (i, t) in tracklets.iter().enumerate() {
        rank_gallery(&format!("t{i}"), t, &index, &heads, Method::Seam).unwrap();
    }
    let full = start.elapsed();

    let small = HeadDims { input: 8, embed: 1024, inner: 8 };
    let sf = SingleFrameHead::new(small, 8);
    let ks = [2usize, 4, 8, 16];
    let cases: Vec<_> = ks
        .iter()
        .map(|&k| {
            let frames = random_frames(10, k, 8, &mut rng);
            let descs = embed_frames(&frames, &sf).unwrap();
            (frames, descs, TrackingConfig { max_tracklets: k, ..tracking })
        })
        .collect();
    let mut jobs: Vec<Box<dyn FnMut() + '_>> = cases
        .iter()
        .map(|(frames, descs, cfg)| {
            let sf = &sf;
            Box::new(move || {
                std::hint::black_box(build_tracklets_with_descriptors(frames, descs, sf, cfg).unwrap());
            }) as Box<dyn FnMut()>
        })
        .collect();
    let times = time_interleaved(&mut jobs, 10, Duration::from_millis(20));
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let micros: Vec<String> = times.iter().map(|t| format!("{:.1}", t * 1e6)).collect();
    let pass = full < Duration::from_secs(2) && (1.6..=2.4).contains(&slope);
    report(
        8,
        "performance bound",
        pass,
        &format!("T=10, 5 dets/frame, 1000 items in {full:.2?}; scaling exponent in detections per frame {slope:.2} (tracking {} us)", micros.join(" / ")),
    );
    assert!(pass);
}

#[test]
fn c09_rrs_contract() {
    let mut rng = stream_rng(9, 0, 0);
    let mut bad = 0;
    for _ in 0..10_000 {
        let t = rng.random_range(1..=20);
        let n = rng.random_range(t..=200);
        let idx = rrs_sample(n, t, &mut rng).unwrap();
        let mut per_chunk = vec![0usize; t];
        for &i in &idx {
            // chunk c covers [floor(c n / t), floor((c + 1) n / t))
            let c = (0..t).find(|&c| c * n / t <= i && i < (c + 1) * n / t).expect("index inside [0, n)");
            per_chunk[c] += 1;
        }
        if idx.len() != t || per_chunk.iter().any(|&c| c != 1) {
            bad += 1;
        }
    }
    let identity = (1..=30).all(|n| rrs_sample(n, n, &mut rng).unwrap() == (0..n).collect::<Vec<_>>());
    let pass = bad == 0 && identity;
    report(9, "RRS contract", pass, &format!("{bad} of 10000 draws off contract, N=T identity {identity}"));
    assert!(pass);
}

fn attention_peak(seed: u64) -> usize {
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
    let gallery = generate_gallery(&synth).unwrap();
    let train: Vec<_> = generate_sequences(&gallery, &synth, "train", 0).unwrap().into_iter().map(|s| s.record).collect();
    let test_cfg = SynthConfig { n_sequences: 50, ..synth.clone() };
    let test: Vec<_> = generate_sequences(&gallery, &test_cfg, "test", 1).unwrap().into_iter().map(|s| s.record).collect();
    let (src_items, src_records) = generate_source(&synth, 50, 500).unwrap();
    let pairs = pairs_from_records(&src_records, &src_items, 3, seed).unwrap();
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let (sf, _) = pretrain_single(&pairs, &PretrainConfig { dims, seed, ..Default::default() }).unwrap();
    let tracking = TrackingConfig {
        propagation_threshold: 1e-6,
        pivot_match_threshold: 0.5,
        max_tracklets: 8,
    };
    let cfg = TrainConfig { tracking, seed, ..Default::default() };
    let heads = train_target(&train, &gallery.items, sf, &cfg, 1).unwrap().heads;
    let curve = percentile_curve(&test, &heads, &tracking, 21, 1).unwrap();
    curve_argmax(&curve).unwrap()
}

#[test]
fn c10_attention_percentile() {
    let peaks: Vec<usize> = (0..10).map(attention_peak).collect();
    let early = peaks.iter().filter(|&&p| p <= 5).count();
    let pass = early >= 9;
    report(10, "attention percentile", pass, &format!("peak within the first quartile in {early} of 10 runs, peaks {peaks:?}"));
    assert!(pass);
}

#[test]
fn c11_dedup() {
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let start = Instant::now();
    let result = dedup(&corpus.images, &DedupConfig::default(), 1).unwrap();
    let elapsed = start.elapsed();

    let key = |a: &str, b: &str| if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
    let truth: HashSet<_> = corpus.planted.iter().map(|p| key(&p.original, &p.duplicate)).collect();
    let mut found = HashSet::new();
    for g in &result.groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                found.insert(key(&g[i], &g[j]));
            }
        }
    }
    let hits = found.intersection(&truth).count() as f64;
    let precision = if found.is_empty() { 0.0 } else { hits / found.len() as f64 };
    let recall = hits / truth.len() as f64;

    let (mut ds, mut dt, mut unregistered) = (0.0f64, 0.0f64, 0);
    for p in &corpus.planted {
        let v = result.candidates.iter().find(|v| key(&v.a, &v.b) == key(&p.original, &p.duplicate));
        let Some((s, tx, ty)) = v.and_then(|v| {
            let (s, tx, ty) = (v.scale?, v.tx?, v.ty?);
            Some(if v.a == p.original { (s, tx, ty) } else { (1.0 / s, -tx / s, -ty / s) })
        }) else {
            unregistered += 1;
            continue;
        };
        ds = ds.max((s - p.transform.scale).abs());
        dt = dt.max((tx - p.transform.tx).hypot(ty - p.transform.ty));
    }

    let pass = precision >= 0.95
        && recall >= 0.95
        && unregistered == 0
        && ds <= 0.01
        && dt <= 0.5
        && elapsed < Duration::from_secs(30);
    report(
        11,
        "dedup",
        pass,
        &format!("precision {precision:.3} recall {recall:.3}, max |ds| {ds:.4} max |dt| {dt:.3} px, {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn c12_bootstrap_evaluation() {
    let mut rng = stream_rng(12, 0, 0);
    let ks = [1, 5, 10, 20];
    let mut bad = 0;
    for trial in 0..200 {
        let n = rng.random_range(1..=300);
        let ranks: Vec<Option<usize>> = (0..n).map(|_| rng.random_bool(0.9).then(|| rng.random_range(1..=50))).collect();
        let cfg = BootstrapConfig { pool_size: n, repeats: 1, seed: trial };
        let stats = bootstrap_eval(&ranks, &ks, &cfg).unwrap();
        for (s, &k) in stats.iter().zip(&ks) {
            let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
            if s.k != k || s.mean != hits as f64 / n as f64 || s.std != 0.0 {
                bad += 1;
            }
        }
    }
    let pass = bad == 0;
    report(12, "bootstrap evaluation", pass, &format!("{bad} of 800 statistics differ from plain top-K"));
    assert!(pass);
}
