//! `rtext`: synthesize, split, train, evaluate and inspect embedding datasets.
//!
//! Exit codes: 0 success, 1 data or runtime error, 2 usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rtext_core::Checkpoint;
use rtext_core::eval::{evaluate_head, evaluate_mode, render_table, EvalOptions, DEFAULT_K};
use rtext_core::fusion::{EmbeddingMode, GateVariant};
use rtext_core::knn::Metric;
use rtext_core::optim::{Algorithm, OptimizerConfig};
use rtext_core::store::{
    load_dataset, stratified_split, synth_generate, write_dataset, LabelLevel, Split, SplitConfig, SynthConfig,
};
use rtext_core::train::{loss_csv, train, Mining, Objective, TrainConfig};
use rtext_core::Dataset;

/// Bad flags or missing inputs; maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "rtext", version, about = "Image/text embedding fusion toolkit")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and split it.
    Synth(SynthArgs),
    /// Reassign the train/test split of a dataset.
    Split(SplitArgs),
    /// Train the fusion network.
    Train(TrainArgs),
    /// Evaluate embeddings with the kNN protocol.
    Eval(EvalArgs),
    /// Summarize a dataset.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to the manifest path with a `.f32` extension.
    #[arg(long)]
    blob: Option<PathBuf>,
}

impl DatasetArgs {
    fn blob(&self) -> PathBuf {
        self.blob.clone().unwrap_or_else(|| self.manifest.with_extension("f32"))
    }

    fn load(&self) -> Result<Dataset> {
        let blob = self.blob();
        for p in [&self.manifest, &blob] {
            if !p.exists() {
                return Err(usage(format!("dataset file {} does not exist", p.display())));
            }
        }
        Ok(load_dataset(&self.manifest, &blob)?)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    categories: usize,
    #[arg(long, default_value_t = 4)]
    subcats: usize,
    #[arg(long, default_value_t = 50)]
    per_subcat: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = SynthConfig::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().text_specificity)]
    text_specificity: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value = "synth.json")]
    manifest: PathBuf,
    #[arg(long)]
    blob: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_manifest: PathBuf,
    #[arg(long)]
    out_blob: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// `triplet` or `cross_entropy`.
    #[arg(long, default_value = "triplet")]
    objective: String,
    /// Triplet margin.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, alias = "k-steps", default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// `adam` or `sgd`.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// `semi_hard`, `hard` or `random`.
    #[arg(long, default_value = "semi_hard")]
    mining: String,
    #[arg(long, default_value = "subcategory")]
    label_level: String,
    /// `paper` or `tirg`.
    #[arg(long, default_value = "paper")]
    gate_variant: String,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    hidden2: Option<usize>,
    #[arg(long)]
    l2_normalize_output: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Checkpoint header; the blob is the same path with a `.f32` extension.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated list of image, text, concat, fused, head.
    #[arg(long, default_value = "image,text,concat")]
    modes: String,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long, default_value = "subcategory")]
    level: String,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

fn parse<T: std::str::FromStr<Err = rtext_core::Error>>(flag: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e| usage(format!("--{flag}: {e}")))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// The only file that records wall-clock time.
fn write_meta(dir: &Path, command: &str, settings: serde_json::Value) -> Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": secs,
        "threads": rayon::current_num_threads(),
        "settings": settings,
    });
    write(&dir.join("meta.json"), format!("{}\n", serde_json::to_string_pretty(&meta)?))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_per_subcat: a.per_subcat,
        n_categories: a.categories,
        n_subcats_per_cat: a.subcats,
        dim: a.dim,
        noise: a.noise,
        text_specificity: a.text_specificity,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let split = SplitConfig {
        train_fraction: a.train_fraction,
        seed: a.seed,
    };
    if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
        return Err(usage("--train-fraction must lie in (0, 1)"));
    }
    let mut ds: Dataset = synth_generate(&cfg)?;
    let outcome = stratified_split(&mut ds.records, &split)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let blob = a.blob.clone().unwrap_or_else(|| a.manifest.with_extension("f32"));
    if let Some(dir) = a.manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_dataset(&ds, &a.manifest, &blob)?;
    println!(
        "wrote {} records ({} train / {} test) to {}",
        ds.records.len(),
        outcome.train,
        outcome.test,
        a.manifest.display()
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(usage("--train-fraction must lie in (0, 1)"));
    }
    let mut ds = a.data.load()?;
    let outcome = stratified_split(
        &mut ds.records,
        &SplitConfig {
            train_fraction: a.train_fraction,
            seed: a.seed,
        },
    )?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let blob = a.out_blob.clone().unwrap_or_else(|| a.out_manifest.with_extension("f32"));
    write_dataset(&ds, &a.out_manifest, &blob)?;
    println!("{} train / {} test", outcome.train, outcome.test);
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let algorithm = match a.optimizer.as_str() {
        "adam" => Algorithm::Adam,
        "sgd" => Algorithm::Sgd,
        other => return Err(usage(format!("--optimizer: unknown optimizer `{other}`"))),
    };
    let optimizer = OptimizerConfig {
        algorithm,
        learning_rate: a.lr,
        ..OptimizerConfig::default()
    };
    let cfg = TrainConfig {
        objective: parse::<Objective>("objective", &a.objective)?,
        margin: a.alpha,
        batch_size: a.batch_size,
        steps: a.steps,
        optimizer,
        seed: a.seed,
        mining: parse::<Mining>("mining", &a.mining)?,
        label_level: parse::<LabelLevel>("label-level", &a.label_level)?,
        gate: parse::<GateVariant>("gate-variant", &a.gate_variant)?,
        hidden: a.hidden,
        hidden2: a.hidden2,
        l2_normalize_output: a.l2_normalize_output,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let ds = a.data.load()?;
    let outcome = train(&ds, &cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(&a.out)?;
    let ck = Checkpoint {
        params: outcome.params,
        head: outcome.head,
        seed: cfg.seed,
        step: cfg.steps as u64,
    };
    ck.save(&a.out.join("checkpoint.json"), &a.out.join("checkpoint.f32"))?;
    write(&a.out.join("loss.csv"), loss_csv(&outcome.losses))?;
    write_meta(&a.out, "train", serde_json::to_value(&cfg)?)?;
    if let Some(last) = outcome.losses.last() {
        println!("trained {} steps, final loss {last:.6}", outcome.losses.len());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let blob = path.with_extension("f32");
    for p in [path, blob.as_path()] {
        if !p.exists() {
            return Err(usage(format!("checkpoint file {} does not exist", p.display())));
        }
    }
    Ok(Checkpoint::load(path, &blob)?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let opts = EvalOptions {
        k: a.k,
        metric: parse::<Metric>("metric", &a.metric)?,
        level: parse::<LabelLevel>("level", &a.level)?,
    };
    let mut modes = Vec::new();
    let mut want_head = false;
    for m in a.modes.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if m == "head" {
            want_head = true;
        } else {
            modes.push(parse::<EmbeddingMode>("modes", m)?);
        }
    }
    if modes.is_empty() && !want_head {
        return Err(usage("--modes lists no modes"));
    }
    let needs_checkpoint = want_head || modes.contains(&EmbeddingMode::Fused);
    if needs_checkpoint && a.checkpoint.is_none() {
        return Err(usage("fused and head modes need --checkpoint"));
    }
    let ds = a.data.load()?;
    let ck = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };

    let mut reports = Vec::new();
    for m in &modes {
        reports.push(evaluate_mode(&ds, ck.as_ref().map(|c| &c.params), *m, &opts)?);
    }
    if want_head {
        let ck = ck.as_ref().expect("checked above");
        let head = ck
            .head
            .as_ref()
            .ok_or_else(|| usage("checkpoint has no classifier head; train with --objective cross_entropy"))?;
        reports.push(evaluate_head(&ds, &ck.params, head)?);
    }
    for r in &reports {
        for w in &r.warnings {
            eprintln!("warning [{}]: {w}", r.mode);
        }
    }
    create_dir(&a.out)?;
    write(&a.out.join("report.json"), format!("{}\n", serde_json::to_string_pretty(&reports)?))?;
    let table = render_table(&reports);
    write(&a.out.join("report.txt"), &table)?;
    write_meta(
        &a.out,
        "eval",
        json!({
            "manifest": a.data.manifest,
            "checkpoint": a.checkpoint,
            "modes": a.modes,
            "options": opts,
        }),
    )?;
    print!("{table}");
    Ok(())
}

fn norm_stats(values: &[f64]) -> serde_json::Value {
    if values.is_empty() {
        return json!(null);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    json!({ "min": min, "mean": mean, "max": max })
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let ds = a.data.load()?;
    let mut categories: BTreeMap<&str, usize> = BTreeMap::new();
    let mut subcats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &ds.records {
        *categories.entry(&r.category).or_default() += 1;
        let e = subcats.entry(&r.subcategory).or_default();
        match r.split {
            Split::Train => e.0 += 1,
            Split::Test => e.1 += 1,
        }
    }
    let image_norms: Vec<f64> = ds.records.iter().map(|r| r.image.l2_norm()).collect();
    let text_norms: Vec<f64> = ds.records.iter().map(|r| r.text.l2_norm()).collect();
    let n_train = ds.indices_in(Split::Train).len();
    let summary = json!({
        "records": ds.records.len(),
        "dim_image": ds.dim_image,
        "dim_text": ds.dim_text,
        "train": n_train,
        "test": ds.records.len() - n_train,
        "categories": categories,
        "subcategories": subcats
            .iter()
            .map(|(name, (tr, te))| (name.to_string(), json!({
                "train": tr,
                "test": te,
                "train_fraction": *tr as f64 / (tr + te) as f64,
            })))
            .collect::<BTreeMap<_, _>>(),
        "image_norm": norm_stats(&image_norms),
        "text_norm": norm_stats(&text_norms),
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    println!("records      {}", ds.records.len());
    println!("dims         image {} / text {}", ds.dim_image, ds.dim_text);
    println!("split        {} train / {} test", n_train, ds.records.len() - n_train);
    println!("image norm   {}", summary["image_norm"]);
    println!("text norm    {}", summary["text_norm"]);
    println!();
    println!("category counts");
    for (c, n) in &categories {
        println!("  {c:<32} {n:>7}");
    }
    println!();
    println!("subcategory  train  test  train%");
    for (s, (tr, te)) in &subcats {
        println!(
            "  {s:<32} {tr:>5} {te:>5} {:>6.1}",
            100.0 * *tr as f64 / (tr + te) as f64
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn main() -> ExitCode {
    // exit quietly when stdout is closed early, e.g. piped into `head`
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .unwrap_or_default();
        if msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        default_hook(info);
    }));
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
