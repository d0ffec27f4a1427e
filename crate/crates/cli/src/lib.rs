//! Command implementations for the `vididi` binary.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use vididi_core::config::ExperimentConfig;
use vididi_core::eval::{self, EmbedSettings, LabeledEmbeddings, MetricSettings, ProbeSettings, Report};
use vididi_core::model::{train, NetSpec, ParamSet, StepLog, TrainOutcome};
use vididi_core::schedule::SchedulePolicy;
use vididi_core::synth::{self, GenerateSpec, Split, SynthDataset};
use vididi_core::Error as CoreError;

pub const CHECKPOINT_FILE: &str = "checkpoint.vddi";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "vididi", version, about = "Temporal-derivative self-supervised video learning lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic free-fall dataset.
    Generate(GenerateArgs),
    /// Train an encoder and write a checkpoint plus a per-step log.
    Train(TrainArgs),
    /// Embed a dataset with a checkpoint and report retrieval metrics.
    Eval(EvalArgs),
    /// Train with the base and the full schedule over several seeds.
    Compare(CompareArgs),
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 64)]
    pub videos: usize,
    #[arg(long, default_value_t = 4)]
    pub g_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub bg_classes: usize,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, env = "VIDIDI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Correlate background with gravity on train and anti-correlate on test.
    #[arg(long)]
    pub shortcut: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// `key=value` configuration override; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = "VIDIDI_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub freeze_random_diff: bool,
    /// Run directory for checkpoint, log and resolved config.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelKind {
    Dynamic,
    Static,
    Both,
}

impl LabelKind {
    fn kinds(self) -> &'static [&'static str] {
        match self {
            LabelKind::Dynamic => &["dynamic"],
            LabelKind::Static => &["static"],
            LabelKind::Both => &["dynamic", "static"],
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the config saved next to the checkpoint.
    #[arg(short = 'c', long = "config")]
    pub config: Option<PathBuf>,
    /// Defaults to the dataset named in the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LabelKind::Dynamic)]
    pub labels: LabelKind,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long)]
    pub svg: bool,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value = "compare")]
    pub out: PathBuf,
    /// Concurrent training runs and embedding threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// A failure tagged with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

/// Configuration problems and bad arguments are usage errors; everything
/// else (I/O, numerics, incompatible files) is a runtime failure.
fn classify(e: CoreError) -> CliError {
    match e {
        CoreError::Config { .. } | CoreError::Invalid(_) => CliError::Usage(e.into()),
        other => CliError::Runtime(other.into()),
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a).map(|r| r.summary),
        Command::Eval(a) => cmd_eval(&a).map(|r| r.to_text()),
        Command::Compare(a) => cmd_compare(&a).map(|c| c.table),
        Command::Config => ExperimentConfig::default().to_toml_string().map_err(runtime),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<String, CliError> {
    let mut spec = GenerateSpec::new(a.videos, a.g_classes, a.bg_classes, a.frames, a.size, a.seed);
    spec.shortcut = a.shortcut;
    let ds = synth::generate_with_workers(&spec, a.workers).map_err(classify)?;
    synth::save_dataset(&ds, &a.out).map_err(runtime)?;
    Ok(dataset_summary(&ds, &a.out))
}

pub fn dataset_summary(ds: &SynthDataset, dir: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "videos={}", ds.videos.len());
    let _ = writeln!(s, "dir={}", dir.display());
    if let Some(r) = ds.manifest.first() {
        let _ = writeln!(s, "dims={}x{}x{}x{}", r.dims[0], r.dims[1], r.dims[2], r.dims[3]);
    }
    for split in [Split::Train, Split::Test] {
        let _ = writeln!(s, "{}={}", split.name(), ds.indices(split).len());
    }
    let flagged = ds.manifest.iter().filter(|r| r.latents.out_of_frame).count();
    let _ = writeln!(s, "out_of_frame={flagged}");
    s
}

/// Reads a config file and applies flag overrides in order.
pub fn resolve_config(
    path: &Path,
    overrides: &[String],
    epochs: Option<usize>,
    seed: Option<u64>,
    freeze: bool,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)
        .map_err(|e| match e {
            CoreError::Io(_) => CliError::Usage(anyhow::Error::from(e).context(format!("reading {}", path.display()))),
            other => classify(other),
        })?;
    if cfg.dataset.is_relative() {
        if let Some(parent) = path.parent() {
            cfg.dataset = parent.join(&cfg.dataset);
        }
    }
    for o in overrides {
        cfg.apply_override(o).map_err(classify)?;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if freeze {
        cfg.train.freeze_random_diff = true;
    }
    // Saved run configs must not depend on where they are read from.
    if let Ok(abs) = std::path::absolute(&cfg.dataset) {
        cfg.dataset = abs;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<SynthDataset, CliError> {
    synth::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display())).map_err(CliError::Runtime)
}

/// Trains on the train split of `ds`.
pub fn train_on(ds: &SynthDataset, cfg: &ExperimentConfig) -> Result<TrainOutcome, CoreError> {
    train(&ds.videos_of(Split::Train), cfg)
}

pub fn log_csv(log: &[StepLog]) -> String {
    let mut s = String::from("step,epoch,batch,order_a,order_b,lr,tau,loss");
    if let Some(first) = log.first() {
        for (name, _) in &first.terms {
            let _ = write!(s, ",{name}");
        }
    }
    s.push('\n');
    for r in log {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.batch,
            r.pair.order_a(),
            r.pair.order_b(),
            r.lr,
            r.tau,
            r.loss
        );
        for (_, v) in &r.terms {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub struct TrainResult {
    pub outcome: TrainOutcome,
    pub summary: String,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainResult, CliError> {
    let cfg = resolve_config(&a.config, &a.overrides, a.epochs, a.seed, a.freeze_random_diff)?;
    let ds = load_dataset(&cfg.dataset)?;
    let outcome = train_on(&ds, &cfg).map_err(|e| match e {
        CoreError::NonFiniteLoss { step } => runtime(anyhow::anyhow!("non-finite loss at step {step}")),
        other => classify(other),
    })?;
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    outcome.params.save(&a.out.join(CHECKPOINT_FILE)).map_err(runtime)?;
    std::fs::write(a.out.join(LOG_FILE), log_csv(&outcome.log)).map_err(runtime)?;
    cfg.save(&a.out.join(CONFIG_FILE)).map_err(runtime)?;
    let last = outcome.log.last();
    let summary = format!(
        "steps={}\nfinal_loss={}\ncheckpoint={}\n",
        outcome.log.len(),
        last.map_or(f64::NAN, |r| r.loss),
        a.out.join(CHECKPOINT_FILE).display()
    );
    Ok(TrainResult { outcome, summary })
}

pub fn embed_settings(cfg: &ExperimentConfig) -> EmbedSettings {
    EmbedSettings {
        frames: cfg.clip.frames,
        stride: cfg.clip.stride,
        clips: cfg.eval.clips,
        augment: cfg.augment.clone(),
        random_crop: cfg.eval.random_crop,
        seed: cfg.seed,
    }
}

pub fn metric_settings(cfg: &ExperimentConfig) -> MetricSettings {
    MetricSettings {
        ks: cfg.eval.ks.clone(),
        metric: cfg.eval.metric,
        probe: ProbeSettings { epochs: cfg.eval.probe_epochs, lr: cfg.eval.probe_lr, seed: cfg.seed },
    }
}

/// Embeddings of every video in `ds`, labeled by `kind` (`dynamic` or `static`).
pub fn labeled(ds: &SynthDataset, vectors: ndarray::Array2<f64>, kind: &str) -> Result<LabeledEmbeddings, CoreError> {
    let labels = ds
        .manifest
        .iter()
        .map(|r| if kind == "static" { r.static_label } else { r.dynamic_label })
        .collect();
    LabeledEmbeddings::new(
        ds.manifest.iter().map(|r| r.id.clone()).collect(),
        vectors,
        labels,
        ds.manifest.iter().map(|r| r.split).collect(),
    )
}

pub fn embed_dataset(
    ds: &SynthDataset,
    params: &ParamSet,
    spec: &NetSpec,
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ndarray::Array2<f64>, CoreError> {
    eval::embed_videos(&ds.videos, params, spec, &embed_settings(cfg), workers)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report, CliError> {
    let cfg_path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let mut cfg = resolve_config(&cfg_path, &[], None, None, false)?;
    if let Some(m) = a.metric {
        cfg.eval.metric = match m {
            MetricArg::Cosine => eval::Metric::Cosine,
            MetricArg::Euclidean => eval::Metric::Euclidean,
        };
    }
    let ds = load_dataset(a.dataset.as_ref().unwrap_or(&cfg.dataset))?;
    let params = ParamSet::load(&a.checkpoint).map_err(runtime)?;
    let first = &ds.videos[0];
    let spec = cfg.net.spec_for(cfg.objective, first.channels(), cfg.augment.out_height, cfg.augment.out_width);
    params.check_spec(&spec).map_err(runtime)?;
    let vectors = embed_dataset(&ds, &params, &spec, &cfg, a.workers).map_err(runtime)?;

    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let mut report = Report::default();
    report.push("videos", ds.videos.len());
    report.push("dim", vectors.ncols());
    report.push("metric", format!("{:?}", cfg.eval.metric).to_lowercase());
    for kind in a.labels.kinds() {
        let e = labeled(&ds, vectors.clone(), kind).map_err(runtime)?;
        eval::evaluate(&e, &metric_settings(&cfg), &format!("{kind}."), &mut report).map_err(runtime)?;
        e.save_csv(&a.out.join(format!("embeddings_{kind}.csv"))).map_err(runtime)?;
        if a.svg {
            let coords = eval::pca2d(&e).map_err(runtime)?;
            let svg = eval::scatter_svg(&coords, &e.labels, &format!("{kind} labels"));
            std::fs::write(a.out.join(format!("scatter_{kind}.svg")), svg).map_err(runtime)?;
        }
    }
    std::fs::write(a.out.join(REPORT_FILE), report.to_text()).map_err(runtime)?;
    Ok(report)
}

/// Recall@1 for one trained model on both label sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub seed: u64,
    pub schedule: SchedulePolicy,
    pub dynamic_recall1: f64,
    pub static_recall1: f64,
}

pub struct CompareResult {
    pub rows: Vec<CompareRow>,
    pub table: String,
}

/// Trains with `cfg` and returns test-to-train recall@1 against the
/// dynamic and static labels.
pub fn train_and_score(ds: &SynthDataset, cfg: &ExperimentConfig, workers: usize) -> Result<CompareRow, CoreError> {
    let outcome = train_on(ds, cfg)?;
    let vectors = embed_dataset(ds, &outcome.params, &outcome.spec, cfg, workers)?;
    let recall1 = |kind: &str| -> Result<f64, CoreError> {
        let e = labeled(ds, vectors.clone(), kind)?;
        let r = eval::knn_recall(&e.split(Split::Train)?, &e.split(Split::Test)?, &[1], cfg.eval.metric)?;
        Ok(r[0].1)
    };
    Ok(CompareRow {
        seed: cfg.seed,
        schedule: cfg.schedule,
        dynamic_recall1: recall1("dynamic")?,
        static_recall1: recall1("static")?,
    })
}

/// Base and full-schedule runs for seeds `cfg.seed .. cfg.seed + seeds`,
/// run `workers` at a time. Rows come back ordered by seed, base first.
pub fn compare_runs(ds: &SynthDataset, cfg: &ExperimentConfig, seeds: usize, workers: usize) -> Result<Vec<CompareRow>, CoreError> {
    let jobs: Vec<ExperimentConfig> = (0..seeds as u64)
        .flat_map(|s| {
            [SchedulePolicy::Base, SchedulePolicy::Vididi].map(|schedule| ExperimentConfig {
                seed: cfg.seed + s,
                schedule,
                ..cfg.clone()
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Invalid(format!("worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|c| train_and_score(ds, c, 1)).collect())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("seed,schedule,dynamic_recall@1,static_recall@1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.seed, r.schedule.name(), r.dynamic_recall1, r.static_recall1);
    }
    s
}

/// Mean and sample standard deviation per schedule and label set.
pub fn compare_summary(rows: &[CompareRow]) -> Report {
    let mut report = Report::default();
    for schedule in [SchedulePolicy::Base, SchedulePolicy::Vididi] {
        let pick = |f: fn(&CompareRow) -> f64| -> Vec<f64> { rows.iter().filter(|r| r.schedule == schedule).map(f).collect() };
        for (label, values) in [("dynamic", pick(|r| r.dynamic_recall1)), ("static", pick(|r| r.static_recall1))] {
            let (m, sd) = mean_sd(&values);
            report.push(format!("{}.{label}.recall@1.mean", schedule.name()), m);
            report.push(format!("{}.{label}.recall@1.sd", schedule.name()), sd);
        }
    }
    report
}

/// Side-by-side `mean±sd` lines for a terminal.
pub fn compare_display(rows: &[CompareRow]) -> String {
    let summary = compare_summary(rows);
    let mut s = format!("{:<8} {:>18} {:>18}\n", "schedule", "dynamic recall@1", "static recall@1");
    for schedule in [SchedulePolicy::Base, SchedulePolicy::Vididi] {
        let cell = |label: &str| {
            let key = |stat: &str| summary.get_f64(&format!("{}.{label}.recall@1.{stat}", schedule.name())).unwrap_or(f64::NAN);
            format!("{:.3}±{:.3}", key("mean"), key("sd"))
        };
        let _ = writeln!(s, "{:<8} {:>18} {:>18}", schedule.name(), cell("dynamic"), cell("static"));
    }
    s
}

pub fn cmd_compare(a: &CompareArgs) -> Result<CompareResult, CliError> {
    if a.seeds == 0 {
        return Err(CliError::Usage(anyhow::anyhow!("--seeds must be at least 1")));
    }
    let cfg = resolve_config(&a.config, &a.overrides, a.epochs, None, false)?;
    let ds = load_dataset(&cfg.dataset)?;
    let rows = compare_runs(&ds, &cfg, a.seeds, a.workers).map_err(|e| match e {
        CoreError::NonFiniteLoss { step } => runtime(anyhow::anyhow!("non-finite loss at step {step}")),
        other => classify(other),
    })?;
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let mut f = std::fs::File::create(a.out.join("compare.csv")).map_err(runtime)?;
    f.write_all(compare_table(&rows).as_bytes()).map_err(runtime)?;
    std::fs::write(a.out.join("summary.txt"), compare_summary(&rows).to_text()).map_err(runtime)?;
    Ok(CompareResult { table: compare_display(&rows), rows })
}
