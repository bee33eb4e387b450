use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use seam::attention::percentile_curve;
use seam::dedup::{dedup, DedupConfig, GrayImage, RansacConfig};
use seam::eval::{evaluate_method, per_class_report, prepare_queries, rank_queries, BootstrapConfig, EvalConfig, GalleryIndex, Method};
use seam::io;
use seam::synthetic::{generate_gallery, generate_sequences, generate_source, SynthConfig};
use seam::tracking::TrackingConfig;
use seam::training::{check_loss_gradients, pairs_from_records, pretrain_single, train_target, PretrainConfig, TrainConfig};
use seam::{Error, HeadDims, Heads, SingleFrameHead};

#[derive(Parser)]
#[command(name = "seam", version, about = "Video-to-shop retrieval with multi-frame attention")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic benchmark: gallery, prototypes, train/test and source sets.
    GenSynth(GenSynth),
    /// Pretrain the single-frame head on source pairs.
    Pretrain(Pretrain),
    /// Pseudo-label training of both heads on target sequences.
    Train(Train),
    /// Rank the gallery for every sequence.
    Rank(Rank),
    /// Top-K accuracy of one or more methods.
    Eval(Eval),
    /// Mean attention at equally spaced positions of the tracklet.
    AttnReport(AttnReport),
    /// Find near-duplicate PGM images.
    Dedup(Dedup),
    /// Finite-difference check of the training loss gradients.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct Tracking {
    /// Match score a detection needs to join a tracklet.
    #[arg(long, default_value_t = 0.5)]
    prop_thresh: f64,
    /// Match score a pivot detection must reach.
    #[arg(long, default_value_t = 0.7)]
    pivot_thresh: f64,
    #[arg(long, default_value_t = 8)]
    max_tracklets: usize,
}

impl Tracking {
    fn config(&self) -> TrackingConfig {
        TrackingConfig {
            propagation_threshold: self.prop_thresh,
            pivot_match_threshold: self.pivot_thresh,
            max_tracklets: self.max_tracklets,
        }
    }
}

#[derive(Args)]
struct Model {
    /// Sequences (.seq.jsonl).
    #[arg(long)]
    data: PathBuf,
    /// Gallery (.gal.jsonl).
    #[arg(long)]
    gallery: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Frames sampled per sequence.
    #[arg(long, default_value_t = 10)]
    t: usize,
    #[command(flatten)]
    tracking: Tracking,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GenSynth {
    /// Output path prefix; files get `.gal.jsonl`, `.proto.jsonl`, ... appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    gallery_size: usize,
    #[arg(long, default_value_t = 13)]
    n_classes: usize,
    #[arg(long, default_value_t = 500)]
    train_sequences: usize,
    #[arg(long, default_value_t = 100)]
    test_sequences: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 1024)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    distractor_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    occlusion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    degraded_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    degraded_signal: f64,
    #[arg(long, default_value_t = 0.5)]
    clutter: f64,
    #[arg(long, default_value_t = 1.0)]
    family_spread: f64,
    #[arg(long, default_value_t = 200)]
    source_items: usize,
    #[arg(long, default_value_t = 2000)]
    source_images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Pretrain {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV; stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Negative items per detection.
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    /// Pretrained single-frame checkpoint.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV; stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    t: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    #[arg(long, default_value_t = 1.0)]
    multi_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    single_weight: f64,
    /// Non-local block width.
    #[arg(long, default_value_t = 128)]
    inner_dim: usize,
    #[command(flatten)]
    tracking: Tracking,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct Rank {
    #[command(flatten)]
    model: Model,
    #[arg(long, default_value = "seam", value_parser = parse_method)]
    method: Method,
    /// JSONL rankings; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    model: Model,
    /// Comma-separated method names, or `all`.
    #[arg(long, default_value = "seam", value_parser = parse_methods)]
    method: Methods,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 800)]
    pool_size: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-class CSV of the first method.
    #[arg(long)]
    per_class: Option<PathBuf>,
}

#[derive(Args)]
struct AttnReport {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Equally spaced positions per tracklet.
    #[arg(long, default_value_t = 21)]
    samples: usize,
    #[command(flatten)]
    tracking: Tracking,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct Dedup {
    /// Directory of binary PGM images.
    #[arg(long)]
    images: PathBuf,
    /// Hamming radius of the hash search.
    #[arg(long, default_value_t = 10)]
    radius: u32,
    /// Largest mean absolute pixel difference after registration.
    #[arg(long, default_value_t = 10.0)]
    threshold: f64,
    #[arg(long, default_value_t = 500)]
    ransac_iters: usize,
    /// RANSAC inlier distance in pixels.
    #[arg(long, default_value_t = 2.0)]
    inlier_tol: f64,
    /// Groups as JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Every candidate pair with its registration, as JSONL.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long, default_value_t = 4)]
    t: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 8)]
    inner_dim: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone)]
struct Methods(Vec<Method>);

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_methods(s: &str) -> Result<Methods, String> {
    if s == "all" {
        return Ok(Methods(Method::ALL.to_vec()));
    }
    s.split(',').map(|m| parse_method(m.trim())).collect::<Result<_, _>>().map(Methods)
}

/// `# seam <command> name=value ...` for every argument, defaults included.
fn provenance(matches: &ArgMatches) -> String {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let spec = cmd.find_subcommand(name).expect("known subcommand");
    let mut line = format!("# seam {name}");
    for arg in spec.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "jobs" | "verbose" | "help" | "version") {
            continue;
        }
        let Ok(Some(raw)) = sub.try_get_raw(id) else {
            continue;
        };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        line.push_str(&format!(" {}={}", id.replace('_', "-"), vals.join(",")));
    }
    line
}

fn sink(path: Option<&Path>) -> seam::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes the provenance line then `rows` as CSV.
fn write_csv<T: Serialize>(path: Option<&Path>, header: &str, rows: &[T]) -> seam::Result<()> {
    let label = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let fail = |e: std::io::Error| io_err(&label, e);
    let mut out = sink(path)?;
    writeln!(out, "{header}").map_err(fail)?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| fail(e.into()))?;
    }
    w.flush().map_err(fail)
}

fn write_lines<T: Serialize>(path: Option<&Path>, items: &[T]) -> seam::Result<()> {
    if let Some(p) = path {
        return io::write_jsonl(p, items);
    }
    let mut out = sink(None)?;
    for item in items {
        let line = serde_json::to_string(item).expect("serialisable");
        writeln!(out, "{line}").map_err(|e| io_err(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_synth(a: &GenSynth) -> seam::Result<()> {
    let mut cfg = SynthConfig {
        gallery_size: a.gallery_size,
        n_classes: a.n_classes,
        n_sequences: a.train_sequences,
        frames_per_sequence: a.frames,
        feature_dim: a.feature_dim,
        noise_sigma: a.noise_sigma,
        distractor_rate: a.distractor_rate,
        occlusion_rate: a.occlusion_rate,
        degraded_rate: a.degraded_rate,
        informative_span: None,
        degraded_signal: a.degraded_signal,
        clutter_strength: a.clutter,
        family_spread: a.family_spread,
        seed: a.seed,
    };
    let gallery = generate_gallery(&cfg)?;
    io::save_gallery(&with_suffix(&a.out, ".gal.jsonl"), &gallery.items)?;
    io::save_prototypes(&with_suffix(&a.out, ".proto.jsonl"), &gallery.prototypes)?;
    let train = generate_sequences(&gallery, &cfg, "train", 0)?;
    let train: Vec<_> = train.into_iter().map(|s| s.record).collect();
    io::save_dataset(&with_suffix(&a.out, ".train.seq.jsonl"), &train)?;
    cfg.n_sequences = a.test_sequences;
    let test = generate_sequences(&gallery, &cfg, "test", 1)?;
    let test: Vec<_> = test.into_iter().map(|s| s.record).collect();
    io::save_dataset(&with_suffix(&a.out, ".test.seq.jsonl"), &test)?;
    let (items, records) = generate_source(&cfg, a.source_items, a.source_images)?;
    io::save_gallery(&with_suffix(&a.out, ".src.gal.jsonl"), &items)?;
    io::save_dataset(&with_suffix(&a.out, ".src.seq.jsonl"), &records)
}

fn feature_dim(gallery: &[seam::GalleryItem]) -> seam::Result<usize> {
    gallery
        .first()
        .map(|g| g.conv_feature.len())
        .ok_or(Error::Empty("gallery"))
}

fn pretrain(a: &Pretrain, header: &str) -> seam::Result<()> {
    let gallery = io::load_gallery(&a.gallery)?;
    let records = io::load_dataset(&a.data)?;
    io::check_pairings(&records, &gallery)?;
    let input = feature_dim(&gallery)?;
    let pairs = pairs_from_records(&records, &gallery, a.negatives, a.seed)?;
    let cfg = PretrainConfig {
        dims: HeadDims {
            input,
            embed: a.embed_dim,
            inner: (a.embed_dim / 2).max(1),
        },
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (head, log) = pretrain_single(&pairs, &cfg)?;
    let mut store = seam::numerics::ParamStore::new();
    head.write_params(&mut store);
    io::save_checkpoint(&a.out, &store)?;
    write_csv(a.log.as_deref(), header, &log)
}

fn train(a: &Train, header: &str) -> seam::Result<()> {
    let gallery = io::load_gallery(&a.gallery)?;
    let records = io::load_dataset(&a.data)?;
    let sf = SingleFrameHead::from_params(&io::load_checkpoint(&a.init)?)?.with_inner(a.inner_dim);
    let cfg = TrainConfig {
        t: a.t,
        lr: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        negatives_per_positive: a.negatives,
        multi_weight: a.multi_weight,
        single_weight: a.single_weight,
        tracking: a.tracking.config(),
        seed: a.seed,
    };
    let out = train_target(&records, &gallery, sf, &cfg, a.jobs)?;
    io::save_checkpoint(&a.out, &out.heads.to_params())?;
    write_csv(a.log.as_deref(), header, &out.log)
}

struct Loaded {
    gallery: Vec<seam::GalleryItem>,
    records: Vec<seam::SequenceRecord>,
    heads: Heads,
    cfg: EvalConfig,
}

fn load_model(m: &Model, ks: Vec<usize>, bootstrap: BootstrapConfig) -> seam::Result<Loaded> {
    let gallery = io::load_gallery(&m.gallery)?;
    let records = io::load_dataset(&m.data)?;
    io::check_pairings(&records, &gallery)?;
    let heads = Heads::from_params(&io::load_checkpoint(&m.model)?)?;
    let cfg = EvalConfig {
        t: m.t,
        ks,
        tracking: m.tracking.config(),
        bootstrap,
        seed: m.seed,
    };
    Ok(Loaded {
        gallery,
        records,
        heads,
        cfg,
    })
}

fn rank(a: &Rank) -> seam::Result<()> {
    let l = load_model(&a.model, vec![1], BootstrapConfig::default())?;
    let index = GalleryIndex::build(&l.gallery, &l.heads)?;
    let queries = prepare_queries(&l.records, &l.gallery, &l.heads, &l.cfg, a.model.jobs)?;
    let rankings = rank_queries(&queries, &index, &l.heads, a.method, a.model.jobs)?;
    for q in queries.iter().filter(|q| q.tracklet.is_none()) {
        log::warn!("{}: no tracklet, not ranked", q.query_id);
    }
    let rankings: Vec<_> = rankings.into_iter().flatten().collect();
    write_lines(a.out.as_deref(), &rankings)
}

#[derive(Serialize)]
struct EvalRow {
    method: &'static str,
    k: usize,
    mean: f64,
    std: f64,
    n_queries: usize,
}

#[derive(Serialize)]
struct ClassCsvRow {
    class: &'static str,
    k: usize,
    mean: f64,
    std: f64,
    n_queries: usize,
}

fn eval(a: &Eval, header: &str) -> seam::Result<()> {
    let bootstrap = BootstrapConfig {
        pool_size: a.pool_size,
        repeats: a.repeats,
        seed: a.model.seed,
    };
    let l = load_model(&a.model, a.k.clone(), bootstrap)?;
    let index = GalleryIndex::build(&l.gallery, &l.heads)?;
    let queries = prepare_queries(&l.records, &l.gallery, &l.heads, &l.cfg, a.model.jobs)?;
    let mut rows = Vec::new();
    let mut first = None;
    for &method in &a.method.0 {
        let report = evaluate_method(&queries, &index, &l.heads, method, &l.cfg, a.model.jobs)?;
        rows.extend(report.stats.iter().map(|s| EvalRow {
            method: method.name(),
            k: s.k,
            mean: s.mean,
            std: s.std,
            n_queries: report.n_queries,
        }));
        first.get_or_insert(report);
    }
    write_csv(a.out.as_deref(), header, &rows)?;
    if let (Some(path), Some(report)) = (&a.per_class, first) {
        let classes = per_class_report(&report.outcomes, &a.k, &l.cfg.bootstrap)?;
        let rows: Vec<ClassCsvRow> = classes
            .iter()
            .flat_map(|c| {
                c.stats.iter().map(|s| ClassCsvRow {
                    class: c.class.name(),
                    k: s.k,
                    mean: s.mean,
                    std: s.std,
                    n_queries: c.n_queries,
                })
            })
            .collect();
        write_csv(Some(path), header, &rows)?;
    }
    Ok(())
}

fn attn_report(a: &AttnReport, header: &str) -> seam::Result<()> {
    let records = io::load_dataset(&a.data)?;
    let heads = Heads::from_params(&io::load_checkpoint(&a.model)?)?;
    let curve = percentile_curve(&records, &heads, &a.tracking.config(), a.samples, a.jobs)?;
    write_csv(a.out.as_deref(), header, &curve)
}

#[derive(Serialize)]
struct GroupLine<'a> {
    group: &'a [String],
}

fn run_dedup(a: &Dedup) -> seam::Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.images)
        .map_err(|e| io_err(&a.images, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(|p| {
            let id = p.file_stem().expect("file name").to_string_lossy().into_owned();
            Ok((id, GrayImage::load_pgm(p)?))
        })
        .collect::<seam::Result<Vec<_>>>()?;
    let cfg = DedupConfig {
        radius: a.radius,
        threshold: a.threshold,
        ransac: RansacConfig {
            iters: a.ransac_iters,
            inlier_tol: a.inlier_tol,
            seed: a.seed,
        },
        ..Default::default()
    };
    let report = dedup(&images, &cfg, a.jobs)?;
    let groups: Vec<GroupLine> = report
        .groups
        .iter()
        .filter(|g| g.len() > 1)
        .map(|g| GroupLine { group: g })
        .collect();
    if let Some(p) = &a.pairs {
        io::write_jsonl(p, &report.candidates)?;
    }
    write_lines(a.out.as_deref(), &groups)
}

#[derive(Serialize)]
struct GradRow<'a> {
    param: &'a str,
    max_abs_err: f64,
    max_rel_err: f64,
    passed: bool,
}

fn grad_check(a: &GradCheck, header: &str) -> seam::Result<()> {
    let dims = HeadDims {
        input: a.feature_dim,
        embed: a.embed_dim,
        inner: a.inner_dim,
    };
    let report = check_loss_gradients(a.t, dims, a.groups, a.seed, a.eps, a.tol)?;
    let rows: Vec<GradRow> = report
        .entries
        .iter()
        .map(|e| GradRow {
            param: &e.name,
            max_abs_err: e.max_abs_err,
            max_rel_err: e.max_rel_err,
            passed: e.passed,
        })
        .collect();
    write_csv(a.out.as_deref(), header, &rows)?;
    if !report.passed() {
        return Err(Error::Invalid(format!(
            "gradient check failed: max relative error {:e} above {:e}",
            report.max_rel_err(),
            a.tol
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let header = provenance(&matches);
    let result = match &cli.command {
        Cmd::GenSynth(a) => gen_synth(a),
        Cmd::Pretrain(a) => pretrain(a, &header),
        Cmd::Train(a) => train(a, &header),
        Cmd::Rank(a) => rank(a),
        Cmd::Eval(a) => eval(a, &header),
        Cmd::AttnReport(a) => attn_report(a, &header),
        Cmd::Dedup(a) => run_dedup(a),
        Cmd::GradCheck(a) => grad_check(a, &header),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
