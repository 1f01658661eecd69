use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use stadnet::archive::{read_archive, read_feature_archive, write_feature_archive, ArchiveKind};
use stadnet::config::PipelineConfig;
use stadnet::depth::{self, DepthDataset, DepthNet, DepthTarget, TrainConfig};
use stadnet::embed::{EmbeddingProvider, ExternalEmbeddings, GeometricEmbedder};
use stadnet::filter::{filter_video, FilterParams};
use stadnet::gesture::{self, GestureConfig, GestureModel, GestureNet, GestureTrainConfig, PhaseSchedule, Preset};
use stadnet::model::{read_keypoint_stream, write_keypoint_stream, VideoSample};
use stadnet::nn::AdamConfig;
use stadnet::pipeline::{self, DepthNets, DepthSource, FeaturizeParams, GroundTruthDepths};
use stadnet::sequence::{Dataset, GestureSequence, SplitRatios};
use stadnet::synth;

const STREAM_FILE: &str = "stream.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const GT_FILE: &str = "gt_depth.json";
const FEATURE_EXT: &str = "feat";

#[derive(Parser, Debug)]
#[command(name = "stadnet", version, about = "Skeleton-based dynamic gesture recognition pipeline")]
struct Cli {
    /// TOML configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic keypoint dataset with ground-truth depths.
    SynthGen(SynthGenArgs),
    /// Filter a keypoint stream.
    Filter(FilterArgs),
    /// Turn a filtered stream into per-video feature archives.
    Featurize(FeaturizeArgs),
    /// Train one depth estimator.
    TrainDepth(TrainDepthArgs),
    /// Report the MSE of a depth estimator on a depth archive.
    EvalDepth(EvalDepthArgs),
    /// Split, standardize and pack feature archives into a dataset.
    Prepare(PrepareArgs),
    /// Train the gesture classifier.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a classifier on a dataset split.
    Eval(EvalArgs),
    /// Classify one feature archive.
    Predict(PredictArgs),
    /// Print the header of an archive or a summary of a model file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthGenArgs {
    #[arg(long)]
    classes: Option<u32>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Depth-regression pairs written per estimator.
    #[arg(long)]
    depth_pairs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    rbar: Option<u32>,
    /// Kernel sigma in frames, or `auto` for window / 4.
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory; one archive per video.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the frame rate recorded in the stream.
    #[arg(long)]
    fps: Option<f64>,
    /// Use ground-truth depths instead of the estimators.
    #[arg(long)]
    use_gt_depth: bool,
    /// Ground-truth depth file (default: gt_depth.json next to the input).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    depth_neck: Option<PathBuf>,
    #[arg(long)]
    depth_left: Option<PathBuf>,
    #[arg(long)]
    depth_right: Option<PathBuf>,
    /// Precomputed EMB archive instead of the geometric embedder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainDepthArgs {
    #[arg(long, value_parser = parse_target)]
    which: DepthTarget,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accumulate mini-batch gradients in parallel over fixed chunks.
    #[arg(long)]
    data_parallel: bool,
}

#[derive(Args, Debug)]
struct EvalDepthArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Directory of feature archives.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitRatios>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// `default` or a JSON phase schedule.
    #[arg(long, default_value = "default")]
    phases: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from a trained model and replace its head for this dataset.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
}

fn parse_target(s: &str) -> std::result::Result<DepthTarget, String> {
    s.parse()
}

fn parse_split(s: &str) -> std::result::Result<SplitRatios, String> {
    s.parse()
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn log_config(cfg: &PipelineConfig) {
    log::info!("config hash {}", cfg.hash());
}

fn synth_gen(mut cfg: PipelineConfig, a: SynthGenArgs) -> Result<()> {
    let s = &mut cfg.synth;
    s.classes = a.classes.unwrap_or(s.classes);
    s.per_class = a.per_class.unwrap_or(s.per_class);
    s.dropout = a.dropout.unwrap_or(s.dropout);
    s.jitter = a.jitter.unwrap_or(s.jitter);
    s.seed = a.seed.unwrap_or(s.seed);
    s.depth_pairs = a.depth_pairs.unwrap_or(s.depth_pairs);
    log_config(&cfg);
    let s = &cfg.synth;
    create_dir(&a.out)?;
    let (samples, manifest) = synth::generate_dataset(s.per_class, s.classes, s.seed, s.noise())?;
    let mut gt = GroundTruthDepths::default();
    for x in &samples {
        for (f, d) in x.sample.frames.iter().zip(&x.depths) {
            gt.insert(&x.sample.source_id, f.frame_index, *d);
        }
    }
    let videos: Vec<VideoSample> = samples.into_iter().map(|x| x.sample).collect();
    write_keypoint_stream(a.out.join(STREAM_FILE), &videos)?;
    gt.save(a.out.join(GT_FILE))?;
    write_json(&a.out.join(MANIFEST_FILE), &serde_json::to_value(&manifest)?)?;
    let pairs: Vec<(DepthTarget, DepthDataset)> = [DepthTarget::Neck, DepthTarget::Left, DepthTarget::Right]
        .into_par_iter()
        .enumerate()
        .map(|(i, t)| Ok((t, synth::generate_depth_pairs(t, s.depth_pairs, s.seed.wrapping_add(1000 + i as u64), s.noise())?)))
        .collect::<stadnet::Result<_>>()?;
    for (t, d) in pairs {
        d.write(a.out.join(format!("depth_{}.stadnet", t.name())))?;
    }
    log::info!("wrote {} videos to {}", videos.len(), a.out.display());
    Ok(())
}

fn filter(mut cfg: PipelineConfig, a: FilterArgs) -> Result<()> {
    let f = &mut cfg.filter;
    f.window = a.window.unwrap_or(f.window);
    f.rbar = a.rbar.unwrap_or(f.rbar);
    match a.sigma.as_deref() {
        None => {}
        Some("auto") => f.sigma = None,
        Some(v) => f.sigma = Some(v.parse().with_context(|| format!("invalid sigma '{v}'"))?),
    }
    log_config(&cfg);
    let params: FilterParams = cfg.filter.params();
    params.validate()?;
    let videos = read_keypoint_stream(&a.input)?;
    let filtered: Vec<_> = videos
        .par_iter()
        .map(|v| filter_video(v, params))
        .collect::<stadnet::Result<_>>()?;
    let short = filtered.iter().filter(|f| f.too_short).count();
    let out: Vec<VideoSample> = filtered.into_iter().filter_map(|f| f.into_sample()).collect();
    if short > 0 {
        log::warn!("{short} videos shorter than the window were dropped");
    }
    write_keypoint_stream(&a.out, &out)?;
    log::info!("filtered {} videos", out.len());
    Ok(())
}

fn featurize(cfg: PipelineConfig, a: FeaturizeArgs) -> Result<()> {
    log_config(&cfg);
    let mut videos = read_keypoint_stream(&a.input)?;
    if let Some(fps) = a.fps {
        if !(fps > 0.0 && fps.is_finite()) {
            bail!("--fps must be positive");
        }
        for v in &mut videos {
            v.frames.iter_mut().for_each(|f| f.fps = fps);
        }
    }
    let gt;
    let nets;
    let source = if a.use_gt_depth {
        let path = a.gt.clone().unwrap_or_else(|| a.input.with_file_name(GT_FILE));
        gt = GroundTruthDepths::load(&path)?;
        DepthSource::GroundTruth(&gt)
    } else {
        let neck = a.depth_neck.as_ref().context("--depth-neck is required unless --use-gt-depth is given")?;
        let load = |p: &Option<PathBuf>| p.as_ref().map(DepthNet::load).transpose();
        nets = DepthNets {
            neck: DepthNet::load(neck)?,
            left: load(&a.depth_left)?,
            right: load(&a.depth_right)?,
        };
        DepthSource::Estimated(&nets)
    };
    let provider: Box<dyn EmbeddingProvider> = match &a.embeddings {
        Some(p) => Box::new(ExternalEmbeddings::load(p, Some(cfg.embedding.dim))?),
        None => Box::new(GeometricEmbedder::new(cfg.embedding.dim, cfg.embedding.seed)),
    };
    let params = FeaturizeParams {
        boxes: cfg.attention.box_params(),
        scale_mode: cfg.attention.scale_mode,
    };
    create_dir(&a.out)?;
    let results: Vec<_> = videos
        .par_iter()
        .map(|v| {
            let (seq, report) = pipeline::featurize(v, source, provider.as_ref(), &params)?;
            write_feature_archive(&seq, a.out.join(format!("{}.{FEATURE_EXT}", v.source_id)))?;
            Ok((v.source_id.clone(), report))
        })
        .collect::<stadnet::Result<_>>()?;
    let reports: serde_json::Map<String, serde_json::Value> = results
        .into_iter()
        .map(|(id, r)| Ok((id, serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    write_json(&a.out.join("featurize_report.json"), &serde_json::Value::Object(reports))?;
    log::info!("featurized {} videos into {}", videos.len(), a.out.display());
    Ok(())
}

fn train_depth(mut cfg: PipelineConfig, a: TrainDepthArgs) -> Result<()> {
    cfg.depth.epochs = a.epochs.unwrap_or(cfg.depth.epochs);
    cfg.depth.seed = a.seed.unwrap_or(cfg.depth.seed);
    log_config(&cfg);
    let data = DepthDataset::read(&a.data)?;
    if data.target != a.which {
        bail!("{} holds {} data, not {}", a.data.display(), data.target.name(), a.which.name());
    }
    let d = &cfg.depth;
    let tc = TrainConfig {
        adam: AdamConfig {
            lr: d.lr,
            decay: d.decay,
            ..AdamConfig::default()
        },
        batch_size: d.batch_size,
        epochs: d.epochs,
        seed: d.seed,
        data_parallel: a.data_parallel,
    };
    let mut net = DepthNet::new(a.which, d.seed);
    let report = depth::train(&mut net, &data, &tc)?;
    net.save(&a.out)?;
    let mse = report.loss_curve.last().copied().unwrap_or(f64::NAN);
    log::info!("trained {} estimator: final training MSE {mse:.6e}", a.which.name());
    println!("{}", json!({ "target": a.which.name(), "train_mse": mse, "epochs": d.epochs }));
    Ok(())
}

fn eval_depth(cfg: PipelineConfig, a: EvalDepthArgs) -> Result<()> {
    log_config(&cfg);
    let net = DepthNet::load(&a.model)?;
    let data = DepthDataset::read(&a.data)?;
    if data.target != net.target {
        bail!("model estimates {} depth but data holds {}", net.target.name(), data.target.name());
    }
    let mse = net.mse(&data)?;
    println!("{}", json!({ "target": net.target.name(), "mse": mse, "samples": data.len() }));
    Ok(())
}

fn prepare(mut cfg: PipelineConfig, a: PrepareArgs) -> Result<()> {
    if let Some(s) = a.split {
        cfg.prepare.split = format!("{}/{}/{}", s.train, s.valid, s.test);
    }
    cfg.prepare.seed = a.seed.unwrap_or(cfg.prepare.seed);
    log_config(&cfg);
    let ratios: SplitRatios = cfg.prepare.split.parse().map_err(anyhow::Error::msg)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == FEATURE_EXT))
        .collect();
    paths.sort();
    let seqs: Vec<GestureSequence> = paths.par_iter().map(read_feature_archive).collect::<stadnet::Result<_>>()?;
    let ds = pipeline::prepare(seqs, ratios, cfg.prepare.seed)?;
    ds.write(&a.out)?;
    log::info!(
        "dataset: {} train, {} valid, {} test, {} classes",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.class_count()
    );
    Ok(())
}

fn train(mut cfg: PipelineConfig, a: TrainArgs) -> Result<()> {
    let g = &mut cfg.gesture;
    g.preset = a.preset.unwrap_or(g.preset);
    g.seed = a.seed.unwrap_or(g.seed);
    log_config(&cfg);
    let g = &cfg.gesture;
    let ds = Dataset::read(&a.data)?;
    let classes = ds.class_count();
    let mut net = match &a.from {
        Some(p) => {
            let mut net = GestureModel::load(p)?.net;
            if net.config.embed_dim != ds.embed_dim {
                bail!("model expects embedding width {} but data has {}", net.config.embed_dim, ds.embed_dim);
            }
            net.swap_head(classes, g.seed)?;
            net
        }
        None => {
            let mut gc = GestureConfig::preset(g.preset, classes);
            gc.embed_dim = ds.embed_dim;
            if let Some(d) = g.dropout {
                gc.dropout = d;
            }
            GestureNet::new(gc, g.seed)?
        }
    };
    let schedule = if a.phases == "default" {
        PhaseSchedule::four_phase(&net, g.phase_epochs, g.patience)
    } else {
        let text = fs::read_to_string(&a.phases).with_context(|| format!("reading {}", a.phases))?;
        serde_json::from_str(&text).with_context(|| format!("parsing phase schedule {}", a.phases))?
    };
    let tc = GestureTrainConfig {
        adam: AdamConfig {
            lr: g.lr,
            decay: g.decay,
            ..AdamConfig::default()
        },
        batch_size: g.batch_size,
        seed: g.seed,
    };
    let curves = gesture::train_phases(&mut net, &ds.train, &ds.valid, &schedule, &tc)?;
    let model = GestureModel {
        net,
        stats: Some(ds.stats.clone()),
        curves,
    };
    model.save(&a.out)?;
    let ev = gesture::evaluate(&model.net, &ds.valid)?;
    log::info!("validation accuracy {:.4}", ev.accuracy);
    Ok(())
}

fn eval(cfg: PipelineConfig, a: EvalArgs) -> Result<()> {
    log_config(&cfg);
    let model = GestureModel::load(&a.model)?;
    let ds = Dataset::read(&a.data)?;
    let seqs = match a.split.as_str() {
        "train" => &ds.train,
        "valid" => &ds.valid,
        "test" => &ds.test,
        other => bail!("unknown split '{other}' (train, valid, test)"),
    };
    let ev = gesture::evaluate(&model.net, seqs)?;
    if let Some(p) = &a.confusion {
        fs::write(p, ev.confusion.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    let metrics = json!({
        "split": a.split,
        "samples": ev.confusion.total(),
        "accuracy": ev.accuracy,
        "loss": ev.loss,
        "recall": ev.confusion.recall(),
    });
    if let Some(p) = &a.metrics {
        write_json(p, &metrics)?;
    }
    println!("{metrics}");
    Ok(())
}

fn predict(cfg: PipelineConfig, a: PredictArgs) -> Result<()> {
    log_config(&cfg);
    let model = GestureModel::load(&a.model)?;
    let mut seq = read_feature_archive(&a.input)?;
    match (&seq.stats_id, &model.stats) {
        (None, Some(stats)) => {
            let dim = seq.dim;
            for t in 0..seq.mask.len() {
                if !seq.mask[t] {
                    stats.apply_f32(&mut seq.data[t * dim..(t + 1) * dim])?;
                }
            }
        }
        (Some(id), Some(stats)) if *id != stats.id => bail!("archive was standardized with different statistics"),
        _ => {}
    }
    let p = gesture::predict(&model.net, &seq)?;
    println!(
        "{}",
        json!({
            "source_id": seq.source_id,
            "label": p.label,
            "probability": p.probability,
            "latency_ms": p.latency_ms,
        })
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    if bytes.starts_with(stadnet::archive::MAGIC) {
        let (header, payload) = read_archive(&a.path)?;
        let mut v = serde_json::to_value(&header)?;
        if header.kind != ArchiveKind::Dataset {
            v["payload_values"] = json!(payload.len());
        }
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    if let Ok(m) = GestureModel::load(&a.path) {
        let c = &m.net.config;
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "kind": "gesture-model",
                "config": c,
                "input_dim": c.input_dim(),
                "parameters": stadnet::nn::Parameterized::param_count(&m.net),
                "stats_id": m.stats.as_ref().map(|s| s.id.clone()),
                "phases": m.curves.iter().map(|p| json!({"name": p.name, "epochs": p.epochs.len(), "best_epoch": p.best_epoch})).collect::<Vec<_>>(),
            }))?
        );
        return Ok(());
    }
    if let Ok(n) = DepthNet::load(&a.path) {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "kind": "depth-model",
                "target": n.target.name(),
                "input_dim": n.input_dim(),
                "meta": n.meta,
            }))?
        );
        return Ok(());
    }
    bail!("{} is neither an archive nor a model file", a.path.display())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::SynthGen(a) => synth_gen(cfg, a),
        Command::Filter(a) => filter(cfg, a),
        Command::Featurize(a) => featurize(cfg, a),
        Command::TrainDepth(a) => train_depth(cfg, a),
        Command::EvalDepth(a) => eval_depth(cfg, a),
        Command::Prepare(a) => prepare(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Predict(a) => predict(cfg, a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
