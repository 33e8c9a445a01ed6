//! fd2d: dataset generation, training, evaluation, and benchmarks for the
//! full-duplex D2D resource-allocation toolkit.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fd2d_core::allocators::exhaustive_optimal;
use fd2d_core::dataset::{self, io as dsio, Split};
use fd2d_core::eval::{
    baseline_allocations, bench_seconds, cdf, cdf_to_text, mean, se_outcomes, zero_rate,
    AllocatorMetrics, Baseline, BenchSection, ModelSection, Report, REPORT_SCHEMA_VERSION,
};
use fd2d_core::models::train::{accuracy_of, predict_all, train, PreparedData};
use fd2d_core::models::{checkpoint, AnyModel, Hyperparams, ModelKind, ModelSpec};
use fd2d_core::Config;

#[derive(Parser)]
#[command(name = "fd2d", version, about = "Full-duplex D2D resource allocation toolkit")]
struct Cli {
    /// Use a single worker thread for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and label one dataset split.
    Gen(GenArgs),
    /// Train a model on a labeled dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint and baselines on a test split.
    Eval(EvalArgs),
    /// Time inference or exhaustive labeling over a dataset.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML file with [scenario] and [model] sections; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value = "1")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Inherit normalization statistics from a train split file
    /// (dev/test only).
    #[arg(long)]
    stats_from: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Train split (must carry normalization statistics).
    #[arg(long)]
    data: PathBuf,
    /// Development split for checkpoint selection.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of: erp, random, optimal.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    /// Where the JSON report goes; CDF point lists land next to it.
    #[arg(long)]
    report: PathBuf,
    /// Seed for the random baseline.
    #[arg(long, default_value = "0")]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, conflicts_with = "exhaustive")]
    checkpoint: Option<PathBuf>,
    /// Time the exhaustive labeler instead of a model.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    data: PathBuf,
    /// Inference precision for model benchmarks.
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Optional JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "fc-dnn")]
    FcDnn,
    #[value(name = "sp-conv-att")]
    SpConvAtt,
    #[value(name = "dist-att")]
    DistAtt,
    #[value(name = "dist-att-conv")]
    DistAttConv,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::FcDnn => ModelKind::FcDnn,
            ModelArg::SpConvAtt => ModelKind::SpConvAtt,
            ModelArg::DistAtt => ModelKind::DistAtt,
            ModelArg::DistAttConv => ModelKind::DistAttConv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

/// Optional TOML configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    scenario: Option<Config>,
    #[serde(default)]
    model: Option<Hyperparams>,
}

fn load_config(path: &Option<PathBuf>) -> Result<(Config, Hyperparams)> {
    let file = match path {
        None => ConfigFile::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config file {}", p.display()))?
        }
    };
    let scenario = file.scenario.unwrap_or_default();
    scenario
        .validate()
        .map_err(|e| anyhow!("invalid scenario config: {e}"))?;
    let hp = file.model.unwrap_or_default();
    hp.validate().map_err(|e| anyhow!("invalid model config: {e}"))?;
    Ok((scenario, hp))
}

fn log_config(scenario: &Config, extra: &str) {
    eprintln!(
        "[fd2d] scenario: N={} K={} L={} area={}x{} eta={}dB cue_thr={} | {}",
        scenario.n_pairs,
        scenario.n_channels,
        scenario.n_levels(),
        scenario.area_x,
        scenario.area_y,
        scenario.eta_db,
        scenario.cue_thr,
        extra
    );
}

fn read_dataset(path: &Path) -> Result<dataset::Dataset<f64>> {
    dsio::read_file(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn prepared(ds: &dataset::Dataset<f64>, stats: &dataset::NormStats<f64>) -> PreparedData<f64> {
    PreparedData::from_samples(&ds.samples, stats, ds.config.n_channels, ds.config.n_levels())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let (scenario, _) = load_config(&args.config)?;
    let split: Split = args.split.into();
    log_config(
        &scenario,
        &format!("gen split={} samples={} seed={}", split.name(), args.samples, args.seed),
    );
    let inherited = match (&args.stats_from, split) {
        (Some(_), Split::Train) => bail!("--stats-from only applies to dev/test splits"),
        (Some(p), _) => {
            let src = read_dataset(p)?;
            Some(src.stats.ok_or_else(|| {
                anyhow!("{} carries no normalization statistics", p.display())
            })?)
        }
        (None, _) => None,
    };
    let ds = dataset::build_dataset(&scenario, args.samples, args.seed, split, inherited)
        .context("generating dataset")?;
    dsio::write_file(&ds, &args.out)
        .with_context(|| format!("writing dataset {}", args.out.display()))?;
    eprintln!(
        "[fd2d] wrote {} samples to {}",
        ds.samples.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (_, mut hp) = load_config(&args.config)?;
    if let Some(epochs) = args.epochs {
        hp.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        hp.seed = seed;
    }
    hp.validate().map_err(|e| anyhow!("invalid hyperparameters: {e}"))?;

    let train_ds = read_dataset(&args.data)?;
    let dev_ds = read_dataset(&args.dev)?;
    let stats = train_ds
        .stats
        .clone()
        .ok_or_else(|| anyhow!("{} carries no normalization statistics", args.data.display()))?;
    let kind: ModelKind = args.model.into();
    let scenario = train_ds.config.clone();
    log_config(
        &scenario,
        &format!(
            "train model={} epochs={} lr={} batch={} seed={}",
            kind.name(),
            hp.epochs,
            hp.lr,
            hp.batch,
            hp.seed
        ),
    );

    let spec = ModelSpec {
        n_pairs: scenario.n_pairs,
        n_channels: scenario.n_channels,
        n_levels: scenario.n_levels(),
        hp: hp.clone(),
    };
    let model = AnyModel::new(kind, spec);
    let train_data = prepared(&train_ds, &stats);
    let dev_data = prepared(&dev_ds, &stats);
    let (store, log) = train(&model, &train_data, &dev_data, |epoch, s| {
        eprintln!(
            "[fd2d] epoch {epoch:>3}  loss {:.5}  dev ch {:.4}  dev pw {:.4}",
            s.loss, s.dev_channel_acc, s.dev_power_acc
        );
    })?;
    eprintln!("[fd2d] best epoch {}", log.best_epoch);

    let ckpt = checkpoint::Checkpoint {
        kind,
        hp,
        config: scenario,
        stats,
        store,
    };
    checkpoint::write_file(&ckpt, &args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    eprintln!("[fd2d] wrote checkpoint {}", args.out.display());
    Ok(())
}

fn metrics_for(
    allocations: &[fd2d_core::rate::Allocation],
    data: &PreparedData<f64>,
    ds: &dataset::Dataset<f64>,
) -> (AllocatorMetrics, Vec<f64>) {
    let (channel_accuracy, power_accuracy) = accuracy_of(allocations, data);
    let outcomes = se_outcomes(allocations, &ds.samples, &ds.config);
    (
        AllocatorMetrics {
            channel_accuracy,
            power_accuracy,
            mean_se: mean(&outcomes),
            zero_se_rate: zero_rate(&outcomes),
        },
        outcomes,
    )
}

fn cdf_file_name(report: &Path, tag: &str) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}_cdf_{tag}.txt"))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    log_config(
        &ds.config,
        &format!("eval data={} samples={}", args.data.display(), ds.samples.len()),
    );
    let mut report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config: ds.config.clone(),
        dataset_seed: ds.seed,
        n_samples: ds.samples.len(),
        model: None,
        baselines: Vec::new(),
        cdf_files: Vec::new(),
        bench: Vec::new(),
    };
    let mut cdf_outputs: Vec<(String, PathBuf, Vec<f64>)> = Vec::new();

    if let Some(ckpt_path) = &args.checkpoint {
        let ckpt: checkpoint::Checkpoint<f64> = checkpoint::read_file(ckpt_path)
            .with_context(|| format!("reading checkpoint {}", ckpt_path.display()))?;
        if ckpt.config.n_pairs != ds.config.n_pairs
            || ckpt.config.n_channels != ds.config.n_channels
            || ckpt.config.n_levels() != ds.config.n_levels()
        {
            bail!("checkpoint was trained for a different scenario size");
        }
        let spec = ModelSpec {
            n_pairs: ckpt.config.n_pairs,
            n_channels: ckpt.config.n_channels,
            n_levels: ckpt.config.n_levels(),
            hp: ckpt.hp.clone(),
        };
        let model = AnyModel::new(ckpt.kind, spec);
        let data = prepared(&ds, &ckpt.stats);
        let allocations = predict_all(&model, &ckpt.store, &data, ckpt.hp.batch)
            .map_err(|e| anyhow!("inference failed: {e}"))?;
        let (metrics, outcomes) = metrics_for(&allocations, &data, &ds);
        let counts = model.parameter_counts(&ckpt.store);
        report.model = Some(ModelSection {
            kind: ckpt.kind.name().to_string(),
            parameters: counts.total,
            bs_side_parameters: counts.split.map(|(bs, _)| bs),
            user_side_parameters: counts.split.map(|(_, user)| user),
            metrics,
        });
        cdf_outputs.push((
            ckpt.kind.name().to_string(),
            cdf_file_name(&args.report, ckpt.kind.name()),
            outcomes,
        ));
    }

    // baseline accuracies need the labels, not the model statistics
    let label_stats = ds
        .stats
        .clone()
        .unwrap_or_else(|| dataset::compute_stats(&ds.samples));
    let data = prepared(&ds, &label_stats);
    for name in &args.baselines {
        let baseline = Baseline::parse(name)
            .ok_or_else(|| anyhow!("unknown baseline '{name}' (erp, random, optimal)"))?;
        let allocations = baseline_allocations(baseline, &ds.samples, &ds.config, args.seed);
        let (metrics, outcomes) = metrics_for(&allocations, &data, &ds);
        report.baselines.push((baseline.name().to_string(), metrics));
        cdf_outputs.push((
            baseline.name().to_string(),
            cdf_file_name(&args.report, baseline.name()),
            outcomes,
        ));
    }

    for (tag, path, outcomes) in &cdf_outputs {
        let points = cdf(outcomes);
        std::fs::write(path, cdf_to_text(&points))
            .with_context(|| format!("writing CDF file {}", path.display()))?;
        report
            .cdf_files
            .push((tag.clone(), path.file_name().unwrap().to_string_lossy().into_owned()));
    }
    std::fs::write(&args.report, report.to_json())
        .with_context(|| format!("writing report {}", args.report.display()))?;
    print!("{}", report.render_table());
    eprintln!("[fd2d] wrote report {}", args.report.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let n = ds.samples.len();
    let workers = rayon::current_num_threads();
    let mut sections = Vec::new();

    if args.exhaustive {
        log_config(&ds.config, &format!("bench exhaustive samples={n}"));
        let cfg = ds.config.clone();
        let seconds = bench_seconds(|| {
            for s in &ds.samples {
                std::hint::black_box(
                    exhaustive_optimal(&s.csi, &cfg).expect("labeled samples are admissible"),
                );
            }
        });
        sections.push(BenchSection {
            what: "exhaustive".into(),
            samples: n,
            seconds,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            workers,
        });
    } else {
        let ckpt_path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("bench needs --checkpoint or --exhaustive"))?;
        let ckpt: checkpoint::Checkpoint<f64> = checkpoint::read_file(ckpt_path)
            .with_context(|| format!("reading checkpoint {}", ckpt_path.display()))?;
        let spec = ModelSpec {
            n_pairs: ckpt.config.n_pairs,
            n_channels: ckpt.config.n_channels,
            n_levels: ckpt.config.n_levels(),
            hp: ckpt.hp.clone(),
        };
        let model = AnyModel::new(ckpt.kind, spec);
        let batch = ckpt.hp.batch;
        let (what, seconds) = match args.precision {
            PrecisionArg::F64 => {
                log_config(&ds.config, &format!("bench model={} f64 samples={n}", ckpt.kind.name()));
                let seconds = bench_seconds(|| {
                    // end to end: normalization, forward passes, decode
                    let data = prepared(&ds, &ckpt.stats);
                    std::hint::black_box(
                        predict_all(&model, &ckpt.store, &data, batch).expect("inference"),
                    );
                });
                (format!("{} inference f64", ckpt.kind.name()), seconds)
            }
            PrecisionArg::F32 => {
                log_config(&ds.config, &format!("bench model={} f32 samples={n}", ckpt.kind.name()));
                let store32 = ckpt.store.cast::<f32>();
                let seconds = bench_seconds(|| {
                    let data = prepared(&ds, &ckpt.stats).cast::<f32>();
                    std::hint::black_box(
                        predict_all(&model, &store32, &data, batch).expect("inference"),
                    );
                });
                (format!("{} inference f32", ckpt.kind.name()), seconds)
            }
        };
        sections.push(BenchSection {
            what,
            samples: n,
            seconds,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            workers,
        });
    }

    for s in &sections {
        println!(
            "bench {:<26} {:>8} samples {:>12.4} s ({} workers, {}/{})",
            s.what, s.samples, s.seconds, s.workers, s.os, s.arch
        );
    }
    if let Some(report_path) = &args.report {
        let report = Report {
            schema_version: REPORT_SCHEMA_VERSION,
            config: ds.config.clone(),
            dataset_seed: ds.seed,
            n_samples: n,
            model: None,
            baselines: Vec::new(),
            cdf_files: Vec::new(),
            bench: sections,
        };
        std::fs::write(report_path, report.to_json())
            .with_context(|| format!("writing report {}", report_path.display()))?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let workers = if cli.deterministic {
        1
    } else {
        std::env::var("FD2D_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0) // 0: let rayon pick the core count
    };
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
