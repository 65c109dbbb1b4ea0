//! Command-line front end: `generate`, `train`, `evaluate`, `flops`,
//! `attention` and `compare`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataio::{
    compress_dataset, generate_dataset, read_dataset, write_dataset, write_labels_csv, CompressionParams, GeneratorConfig,
    SensorLayout,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, sensor_attention_report, write_attention_csv, write_cdf_csv, write_cdf_svg, write_errors_csv,
    write_summary_csv, ErrorSummary,
};
use crate::model::{count_flops, flops_breakdown, Checkpoint, Family, ModelConfig, ModelSize};
use crate::tokenizer::TokenizerSpec;
use crate::train::{train, write_training_log, TrainConfig};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "PDPLOC_THREADS";

/// Relative tolerance of the FLOPs budget check.
pub const FLOPS_TOLERANCE: f64 = 0.25;

#[derive(Debug, Parser)]
#[command(name = "pdploc", version, about = "Transformer indoor localization from distributed-sensor PDPs")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// TOML file with [generator], [compression], [augment] and [train]
    /// tables. Command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a PDP dataset.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Error statistics of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// FLOPs of the preset grid against the budgets.
    Flops(FlopsArgs),
    /// Per-sensor attention scores of a sensor-token model.
    Attention(AttentionArgs),
    /// Percentile table of several checkpoints on one dataset.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only the first N sensors of the default grid.
    #[arg(long)]
    pub sensors: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `<tokenizer>-<size>`, e.g. `sst-small`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_parser = parse_tokenizer)]
    pub tokenizer: Option<TokenizerSpec>,
    /// PBT patch size: sensors then delay bins.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub patch: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_size)]
    pub size: Option<ModelSize>,
    /// Defaults to lswiglu for sst tokens and vanilla otherwise.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma list of `drop`, `shift`, `mixup`, or `all` / `none`.
    #[arg(long)]
    pub aug: Option<String>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub ema_per_step: bool,
    /// Checkpoint path; the training log and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Only this preset; all nine otherwise.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    /// Sensor count; 8 selects the reduced budgets.
    #[arg(long, default_value_t = 18)]
    pub sensors: usize,
    /// Also print the per-component breakdown as JSON.
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Layers to report (0-based); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Use at most this many samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoints to compare (repeatable).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tokenizer(s: &str) -> std::result::Result<TokenizerSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_size(s: &str) -> std::result::Result<ModelSize, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Optional TOML configuration; every table may be omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub generator: GeneratorConfig,
    pub compression: Option<CompressionParams>,
    pub augment: Option<AugmentConfig>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_default();
        if let Some(c) = self.compression {
            t.compression = c;
        }
        if let Some(a) = self.augment {
            t.augment = a;
        }
        t
    }
}

/// Record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: 0.0,
        }
    }

    fn finish(mut self, started: Instant, path: &Path) -> Result<()> {
        self.wall_clock_s = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `<file>.manifest.json` next to a file output, `manifest.json` inside a directory output.
fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl ModelArgs {
    /// Resolves the preset, tokenizer, size and family flags into a config.
    pub fn resolve(&self, sensors: usize, time_samples: usize) -> Result<ModelConfig> {
        let (mut tokenizer, size) = match (&self.preset, self.size) {
            (Some(_), Some(_)) => return Err(Error::Config("--preset and --size are mutually exclusive".into())),
            (Some(p), None) => {
                let (tok, size) = p
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("preset {p:?} must look like <tokenizer>-<size>")))?;
                let tok: TokenizerSpec = tok.parse()?;
                if let Some(t) = self.tokenizer {
                    if t.name() != tok.name() {
                        return Err(Error::Config(format!("--tokenizer {t} contradicts --preset {p}")));
                    }
                }
                (tok, size.parse()?)
            }
            (None, size) => (self.tokenizer.unwrap_or(TokenizerSpec::Sst), size.unwrap_or(ModelSize::Small)),
        };
        if let Some(patch) = &self.patch {
            match tokenizer {
                TokenizerSpec::Pbt { .. } => {
                    tokenizer = TokenizerSpec::Pbt {
                        patch_h: patch[0],
                        patch_w: patch[1],
                    }
                }
                _ => return Err(Error::Config("--patch only applies to pbt tokens".into())),
            }
        }
        let family = self.family.unwrap_or(if tokenizer == TokenizerSpec::Sst {
            Family::LSwiGlu
        } else {
            Family::Vanilla
        });
        ModelConfig::preset(family, tokenizer, size, sensors, time_samples)
    }
}

/// Parses `args` and runs the selected command.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // fails only if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Attention(a) => cmd_attention(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

pub fn cmd_generate(a: GenerateArgs, file: &FileConfig) -> Result<()> {
    let started = Instant::now();
    let mut gen = file.generator.clone();
    if let Some(seed) = a.seed {
        gen.rng_seed = seed;
    }
    let layout = match a.sensors {
        Some(n) => SensorLayout::default_subset(n)?,
        None => SensorLayout::default(),
    };
    let samples = generate_dataset(&layout, &gen, a.samples as usize)?;
    write_dataset(&a.out, &samples)?;
    let labels = sibling(&a.out, "_labels.csv");
    write_labels_csv(&labels, &samples)?;
    let mut manifest = RunManifest::new(
        "generate",
        Some(gen.rng_seed),
        serde_json::json!({ "generator": gen, "layout": layout, "samples": a.samples }),
    );
    manifest.outputs = vec![a.out.clone(), labels];
    manifest.finish(started, &manifest_path(&a.out, false))?;
    println!(
        "wrote {} samples ({} sensors x {} bins) to {}",
        samples.len(),
        layout.sensor_count(),
        gen.time_samples,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let started = Instant::now();
    let mut cfg = file.train_config();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(list) = &a.aug {
        cfg.augment = cfg.augment.with_enabled(list)?;
    }
    if let Some(lr) = a.lr_max {
        cfg.lr_max = lr;
    }
    if a.ema_per_step {
        cfg.ema_per_step = true;
    }
    cfg.validate()?;
    let data = read_dataset(&a.dataset)?;
    let model = a.model.resolve(data[0].sensors(), data[0].time_samples())?;
    cfg.augment.validate(model.sensors)?;
    log::info!(
        "training {} {} ({:.2}M FLOPs) on {} samples for {} epochs",
        model.family,
        model.tokenizer,
        count_flops(&model) / 1e6,
        data.len(),
        cfg.epochs
    );
    let outcome = train(&data, &model, &cfg, None, |e| {
        log::info!("epoch {:>4} lr {:.3e} loss {:.4} grad {:.3}", e.epoch, e.lr, e.loss, e.grad_norm);
    })?;
    outcome.checkpoint.save(&a.out)?;
    let log_path = sibling(&a.out, "_training_log.csv");
    write_training_log(&log_path, &outcome.history)?;
    let mut manifest = RunManifest::new(
        "train",
        Some(cfg.seed),
        serde_json::json!({ "model": model, "train": cfg }),
    );
    manifest.inputs = vec![a.dataset];
    manifest.outputs = vec![a.out.clone(), log_path];
    manifest.finish(started, &manifest_path(&a.out, false))?;
    let last = outcome.history.last().map(|e| e.loss).unwrap_or(f64::NAN);
    println!("final training loss {last:.4} m; checkpoint {}", a.out.display());
    Ok(())
}

fn print_summary_table(rows: &[(String, &ErrorSummary)]) {
    println!("{:<28} {:>8} {:>8} {:>8} {:>8} {:>8}", "model", "mean", "p50", "p67", "p80", "p90");
    for (name, s) in rows {
        println!(
            "{:<28} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            name, s.mean, s.p50, s.p67, s.p80, s.p90
        );
    }
}

fn model_label(config: &ModelConfig) -> String {
    format!("{}-{}-{}L{}D", config.family, config.tokenizer, config.n_layers, config.d_emb)
}

pub fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = read_dataset(&a.dataset)?;
    let eval = evaluate(&ckpt, &data)?;
    create_dir(&a.out)?;
    let name = model_label(ckpt.config());
    let rows = [(name, &eval.summary)];
    let outputs = [
        a.out.join("errors.csv"),
        a.out.join("summary.csv"),
        a.out.join("cdf.csv"),
        a.out.join("cdf.svg"),
    ];
    write_errors_csv(&outputs[0], &eval)?;
    write_summary_csv(&outputs[1], &rows)?;
    write_cdf_csv(&outputs[2], &eval.summary)?;
    write_cdf_svg(&outputs[3], &rows)?;
    let mut manifest = RunManifest::new("evaluate", None, serde_json::json!({ "model": ckpt.config() }));
    manifest.inputs = vec![a.checkpoint, a.dataset];
    manifest.outputs = outputs.to_vec();
    manifest.finish(started, &manifest_path(&a.out, true))?;
    print_summary_table(&rows);
    Ok(())
}

/// One line of the FLOPs table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsRow {
    pub name: String,
    pub family: Family,
    pub flops: f64,
    pub budget: f64,
    pub within: bool,
}

/// FLOPs of the requested presets against their budgets.
pub fn flops_table(preset: Option<&str>, family: Option<Family>, sensors: usize) -> Result<Vec<FlopsRow>> {
    let reduced = sensors != 18;
    let names: Vec<String> = match preset {
        Some(p) => vec![p.to_string()],
        None => {
            let tokenizers: &[&str] = if reduced { &["sst"] } else { &["pbt", "tst", "sst"] };
            tokenizers
                .iter()
                .flat_map(|t| ModelSize::ALL.iter().map(move |s| format!("{t}-{}", s.name())))
                .collect()
        }
    };
    let mut rows = Vec::new();
    for name in names {
        let (tok, size) = name
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("preset {name:?} must look like <tokenizer>-<size>")))?;
        let tok: TokenizerSpec = tok.parse()?;
        let size: ModelSize = size.parse()?;
        let families = match family {
            Some(f) => vec![f],
            None if tok == TokenizerSpec::Sst => vec![Family::Vanilla, Family::LSwiGlu],
            None => vec![Family::Vanilla],
        };
        for fam in families {
            let cfg = ModelConfig::preset(fam, tok, size, sensors, crate::dataio::DEFAULT_TIME_SAMPLES)?;
            let flops = count_flops(&cfg);
            let budget = if reduced { size.reduced_budget() } else { size.flops_budget() };
            rows.push(FlopsRow {
                name: name.clone(),
                family: fam,
                flops,
                budget,
                within: (flops / budget - 1.0).abs() <= FLOPS_TOLERANCE,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_flops(a: FlopsArgs) -> Result<()> {
    let rows = flops_table(a.preset.as_deref(), a.family, a.sensors)?;
    println!(
        "{:<12} {:<8} {:>10} {:>10} {:>8}  within +-{:.0}%",
        "preset",
        "family",
        "FLOPs",
        "budget",
        "ratio",
        FLOPS_TOLERANCE * 100.0
    );
    for r in &rows {
        println!(
            "{:<12} {:<8} {:>9.2}M {:>9.2}M {:>8.3}  {}",
            r.name,
            r.family.to_string(),
            r.flops / 1e6,
            r.budget / 1e6,
            r.flops / r.budget,
            if r.within { "pass" } else { "FAIL" }
        );
        if a.breakdown {
            let (tok, size) = r.name.split_once('-').expect("validated above");
            let cfg = ModelConfig::preset(r.family, tok.parse()?, size.parse()?, a.sensors, crate::dataio::DEFAULT_TIME_SAMPLES)?;
            println!("  {}", serde_json::to_string(&flops_breakdown(&cfg))?);
        }
    }
    if rows.iter().all(|r| r.within) {
        Ok(())
    } else {
        Err(Error::InvalidInput("some presets fall outside their FLOPs budget".into()))
    }
}

pub fn cmd_attention(a: AttentionArgs) -> Result<()> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config = ckpt.config();
    let mut data = read_dataset(&a.dataset)?;
    if let Some(n) = a.samples {
        data.truncate(n.max(1));
    }
    let layers: Vec<usize> = if a.layers.is_empty() {
        (0..config.n_layers).collect()
    } else {
        a.layers.clone()
    };
    let inputs = compress_dataset(&data, &ckpt.header.compression)?;
    let report = sensor_attention_report(&ckpt.ema, config, &inputs, &layers)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for (layer, scores) in layers.iter().zip(&report) {
        let path = a.out.join(format!("attention_layer{layer}.csv"));
        write_attention_csv(&path, scores)?;
        outputs.push(path);
        let top = scores
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, s)| format!("sensor {} ({s:.3})", i + 1))
            .unwrap_or_default();
        println!("layer {layer}: most attended {top}");
    }
    let mut manifest = RunManifest::new("attention", None, serde_json::json!({ "layers": layers, "samples": data.len() }));
    manifest.inputs = vec![a.checkpoint, a.dataset];
    manifest.outputs = outputs;
    manifest.finish(started, &manifest_path(&a.out, true))
}

pub fn cmd_compare(a: CompareArgs) -> Result<()> {
    let started = Instant::now();
    let data = read_dataset(&a.dataset)?;
    let mut named = Vec::new();
    for path in &a.checkpoints {
        let ckpt = Checkpoint::load(path)?;
        let eval = evaluate(&ckpt, &data)?;
        named.push((model_label(ckpt.config()), eval.summary));
    }
    let rows: Vec<(String, &ErrorSummary)> = named.iter().map(|(n, s)| (n.clone(), s)).collect();
    create_dir(&a.out)?;
    let outputs = vec![a.out.join("summary.csv"), a.out.join("cdf.svg")];
    write_summary_csv(&outputs[0], &rows)?;
    write_cdf_svg(&outputs[1], &rows)?;
    print_summary_table(&rows);
    if let Some((best, _)) = rows.iter().min_by(|x, y| x.1.p90.total_cmp(&y.1.p90)) {
        println!("lowest p90: {best}");
    }
    let mut manifest = RunManifest::new("compare", None, serde_json::json!({ "checkpoints": a.checkpoints }));
    manifest.inputs = std::iter::once(a.dataset).chain(a.checkpoints).collect();
    manifest.outputs = outputs;
    manifest.finish(started, &manifest_path(&a.out, true))
}
