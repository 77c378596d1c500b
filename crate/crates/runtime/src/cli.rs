//! Command-line front end. Exit codes: 0 success, 1 usage or invalid
//! configuration, 2 runtime failure. Failures print one line to stderr,
//! `error: <kind>: <message>`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use milltwin_core::features::extract_features;
use milltwin_core::model::{train, EpochRecord, Mlp};
use milltwin_core::plant::Scenario;
use milltwin_core::signal::{SampleBlock, Segmenter, WindowSpec};
use serde::Serialize;

use crate::config::{load_scenario, PipelineConfig, RunMode};
use crate::dataset;
use crate::files::{self, render_feature_csv, render_jsonl, write_json, write_text};
use crate::pipeline::{self, histogram_csv, measure_latency, LatencyReport, RunOutcome, RunSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "milltwin", version, about = "Digital twin for tool-workpiece contact detection in milling")]
pub struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the plant and write a labelled peak-amplitude dataset.
    GenData(GenDataArgs),
    /// Train the contact classifier on a dataset.
    Train(TrainArgs),
    /// Run the closed loop against the simulated plant.
    Run(RunArgs),
    /// Feed a recorded signal file through the pipeline.
    Replay(ReplayArgs),
    /// Repeat a run and summarise end-to-end latency.
    Bench(BenchArgs),
    /// Run the closed loop and save the generated signal.
    Record(RecordArgs),
    /// Extract window features from a signal file.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset CSV to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Scenario file; defaults to the 155.5 s, 1,555-window dataset scenario.
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Plant noise seed (same as `--set plant.seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV from `gen-data`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training report JSON; defaults to the model path with `.report.json`.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Split, shuffle and initialisation seed (same as `--set train.seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model file; overrides `model.path`.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Directory for the report, histogram and logs.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// realtime, replay or as-fast-as-possible; overrides `run.mode`.
    #[arg(long)]
    pub mode: Option<RunMode>,
    /// Plant noise seed (same as `--set plant.seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Signal file written by `record`.
    #[arg(long, value_name = "FILE")]
    pub signal: PathBuf,
    /// Directory for the report, histogram and logs.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Defaults to replay; realtime paces the file at its sample rate.
    #[arg(long)]
    pub mode: Option<RunMode>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Number of runs.
    #[arg(long, default_value_t = 3)]
    pub repeats: u32,
    /// Overrides `run.mode`.
    #[arg(long)]
    pub mode: Option<RunMode>,
    /// Write the summaries as JSON as well as printing them.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Plant noise seed (same as `--set plant.seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Signal file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the run's report and logs here.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Defaults to as-fast-as-possible.
    #[arg(long)]
    pub mode: Option<RunMode>,
    /// Plant noise seed (same as `--set plant.seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Signal file.
    #[arg(long, value_name = "FILE")]
    pub signal: PathBuf,
    /// Feature CSV to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    fn new(kind: &'static str, msg: impl ToString) -> Self {
        Self {
            kind,
            msg: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "config" => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }

    /// The single stderr line, newlines flattened.
    pub fn line(&self) -> String {
        let msg = self.msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {}: {msg}", self.kind)
    }
}

impl From<files::FileError> for CliError {
    fn from(e: files::FileError) -> Self {
        match e {
            files::FileError::Io { .. } => Self::new("io", e),
            files::FileError::Format { .. } => Self::new("format", e),
        }
    }
}

impl From<pipeline::PipelineError> for CliError {
    fn from(e: pipeline::PipelineError) -> Self {
        match e {
            pipeline::PipelineError::Config(_) => Self::new("config", e),
            _ => Self::new("pipeline", e),
        }
    }
}

/// Parse, run, print, and return the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                let err = CliError::new("usage", "missing subcommand");
                eprintln!("{}", err.line());
                return err.exit_code();
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let err = CliError::new("usage", first.trim_start_matches("error: "));
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli, extra: &[String]) -> Result<PipelineConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    overrides.extend_from_slice(extra);
    PipelineConfig::load(cli.config.as_deref(), &overrides).map_err(|e| CliError::new("config", e))
}

fn seed_override(key: &str, seed: Option<u64>) -> Vec<String> {
    seed.map(|s| vec![format!("{key}={s}")]).unwrap_or_default()
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Run(a) => {
            let mut cfg = load_config(cli, &seed_override("plant.seed", a.seed))?;
            if let Some(m) = a.mode {
                cfg.mode = m;
            }
            let (model, seed) = load_model(&cfg, &a.model)?;
            let out = pipeline::run(&cfg, model, Some(seed), RunSource::Plant, false)?;
            finish_run(&out, Some(&a.out_dir))
        }
        Command::Replay(a) => {
            let mut cfg = load_config(cli, &[])?;
            cfg.mode = a.mode.unwrap_or(RunMode::Replay);
            let (model, seed) = load_model(&cfg, &a.model)?;
            let (sample_rate_hz, samples) = files::read_signal(&a.signal)?;
            let out = pipeline::run(&cfg, model, Some(seed), RunSource::Recording { sample_rate_hz, samples }, false)?;
            finish_run(&out, Some(&a.out_dir))
        }
        Command::Record(a) => {
            let mut cfg = load_config(cli, &seed_override("plant.seed", a.seed))?;
            cfg.mode = a.mode.unwrap_or(RunMode::AsFastAsPossible);
            let (model, seed) = load_model(&cfg, &a.model)?;
            let out = pipeline::run(&cfg, model, Some(seed), RunSource::Plant, true)?;
            if let Some(samples) = &out.recording {
                files::write_signal(&a.out, cfg.scenario.sample_rate_hz, samples)?;
            }
            finish_run(&out, a.out_dir.as_deref())
        }
        Command::Bench(a) => bench(cli, a),
        Command::Features(a) => features_cmd(cli, a),
    }
}

fn load_model(cfg: &PipelineConfig, arg: &ModelArg) -> Result<(Arc<Mlp>, u64), CliError> {
    let path = arg
        .model
        .as_ref()
        .or(cfg.model_path.as_ref())
        .ok_or_else(|| CliError::new("usage", "no model: pass --model or set model.path"))?;
    let (model, seed) = files::read_model(path)?;
    Ok((Arc::new(model), seed))
}

/// Write the standard outputs of a run; a run that stopped early still
/// writes what it produced before reporting the failure.
fn finish_run(out: &RunOutcome, dir: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = dir {
        write_run_outputs(out, dir)?;
    }
    let r = &out.report;
    let lat = &r.timing.latency;
    println!(
        "windows={} commands={} samples={} dropped={} p99_ns={} within_budget={}",
        r.windows.decided,
        r.commands.len(),
        r.samples.ingested,
        r.samples.dropped,
        lat.end_to_end.map_or("-".into(), |s| s.p99_ns.to_string()),
        lat.verdict.map_or("-".into(), |v| v.within_budget.to_string()),
    );
    match &r.error {
        Some(e) => Err(CliError::new("pipeline", e)),
        None => Ok(()),
    }
}

pub fn write_run_outputs(out: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    write_json(&dir.join("report.json"), &out.report)?;
    write_text(&dir.join("latency_histogram.csv"), &histogram_csv(&out.report.timing.latency))?;
    write_text(&dir.join("features.csv"), &render_feature_csv(&out.features))?;
    write_text(&dir.join("predictions.jsonl"), &render_jsonl(&out.predictions))?;
    write_text(&dir.join("decisions.jsonl"), &render_jsonl(&out.decisions))?;
    write_text(&dir.join("latency.jsonl"), &render_jsonl(&out.latency))?;
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &seed_override("plant.seed", a.seed))?;
    let WindowSpec::Fixed { length } = cfg.window else {
        return Err(CliError::new("config", "gen-data needs a fixed window (window.kind = fixed)"));
    };
    let scenario = match &a.scenario {
        Some(path) => load_scenario(path, Scenario::dataset_default()).map_err(|e| CliError::new("config", e))?,
        None => Scenario::dataset_default(),
    };
    let (meta, rows) =
        dataset::generate(&scenario, &cfg.plant, length).map_err(|e| CliError::new("config", e))?;
    files::write_dataset(&a.out, &meta, &rows)?;
    let positives = rows.iter().filter(|r| r.label).count();
    println!("rows={} contact={} seed={}", rows.len(), positives, meta.seed);
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    format: &'static str,
    version: u32,
    seed: u64,
    dataset: String,
    dataset_seed: Option<u64>,
    train_size: usize,
    val_size: usize,
    test_size: usize,
    test_accuracy: f64,
    best_epoch: u32,
    stopped_epoch: u32,
    best_val_loss: f64,
    epochs: &'a [EpochRecord],
    timing: TrainTiming,
}

#[derive(Serialize)]
struct TrainTiming {
    wall_clock_ns: u64,
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &seed_override("train.seed", a.seed))?;
    let (meta, rows) = files::read_dataset(&a.data)?;
    let started = Instant::now();
    let (model, report) = train(&dataset::to_labeled(&rows), &cfg.train).map_err(|e| CliError::new("train", e))?;
    let wall_clock_ns = started.elapsed().as_nanos() as u64;
    files::write_model(&a.out, &model, report.seed)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(
        &report_path,
        &TrainOutput {
            format: "milltwin-train-report",
            version: 1,
            seed: report.seed,
            dataset: a.data.display().to_string(),
            dataset_seed: meta.map(|m| m.seed),
            train_size: report.train_size,
            val_size: report.val_size,
            test_size: report.test_size,
            test_accuracy: report.test_accuracy,
            best_epoch: report.best_epoch,
            stopped_epoch: report.stopped_epoch,
            best_val_loss: report.best_val_loss,
            epochs: &report.epochs,
            timing: TrainTiming { wall_clock_ns },
        },
    )?;
    println!(
        "test_accuracy={:.4} epochs={} best_epoch={} seconds={:.2}",
        report.test_accuracy,
        report.stopped_epoch,
        report.best_epoch,
        wall_clock_ns as f64 * 1e-9
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput {
    format: &'static str,
    version: u32,
    seed: u64,
    mode: RunMode,
    runs: Vec<LatencyReport>,
    aggregate: LatencyReport,
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<(), CliError> {
    if a.repeats == 0 {
        return Err(CliError::new("usage", "--repeats must be at least 1"));
    }
    let mut cfg = load_config(cli, &seed_override("plant.seed", a.seed))?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let (model, seed) = load_model(&cfg, &a.model)?;
    let mut runs = Vec::new();
    let mut all = Vec::new();
    for i in 0..a.repeats {
        let out = pipeline::run(&cfg, Arc::clone(&model), Some(seed), RunSource::Plant, false)?;
        if let Some(e) = out.report.error {
            return Err(CliError::new("pipeline", format!("run {}: {e}", i + 1)));
        }
        print_latency(&format!("run {}", i + 1), &out.report.timing.latency);
        all.extend_from_slice(&out.latency);
        runs.push(out.report.timing.latency);
    }
    let aggregate = measure_latency(&all, cfg.latency_budget_ns);
    print_latency("aggregate", &aggregate);
    if let Some(path) = &a.out {
        write_json(
            path,
            &BenchOutput {
                format: "milltwin-bench",
                version: 1,
                seed: cfg.plant.seed,
                mode: cfg.mode,
                runs,
                aggregate,
            },
        )?;
    }
    Ok(())
}

fn print_latency(label: &str, r: &LatencyReport) {
    let fmt = |s: Option<milltwin_core::latency::Summary>| {
        s.map_or("-".to_owned(), |s| format!("p50={} p99={} max={}", s.p50_ns, s.p99_ns, s.max_ns))
    };
    println!("{label}: windows={} end_to_end {}", r.windows, fmt(r.end_to_end));
    let st = &r.stages;
    for (name, s) in [
        ("queue", st.queue),
        ("feature", st.feature),
        ("inference", st.inference),
        ("decision", st.decision),
        ("transport", st.transport),
    ] {
        println!("  {name:<9} {}", fmt(s));
    }
    if let Some(v) = r.verdict {
        println!("  budget_ns={} within_budget={}", v.budget_ns, v.within_budget);
    }
}

fn features_cmd(cli: &Cli, a: &FeaturesArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &[])?;
    let (rate, samples) = files::read_signal(&a.signal)?;
    if samples.is_empty() {
        write_text(&a.out, &render_feature_csv(&[]))?;
        return Ok(());
    }
    // Same segmentation as the pipeline, including the end-of-stream flush.
    let block = SampleBlock::new(0, rate, samples).map_err(|e| CliError::new("format", e))?;
    let mut segmenter = Segmenter::new(cfg.window).map_err(|e| CliError::new("config", e))?;
    let mut windows = Vec::new();
    segmenter.push(&block, 0, &mut windows).map_err(|e| CliError::new("format", e))?;
    windows.extend(segmenter.flush(0));
    let rows = windows
        .iter()
        .map(|w| extract_features(w, &cfg.features))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::new("config", e))?;
    write_text(&a.out, &render_feature_csv(&rows))?;
    println!("windows={}", rows.len());
    Ok(())
}
