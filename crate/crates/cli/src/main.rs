use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use preictal_core::ais::{AisParams, Population};
use preictal_core::decision::EventLogWriter;
use preictal_core::eval::{
    baseline_sweep, curve_csv, evaluate_recordings, roc_auc, score_run, synthetic_corpus, threshold_sweep,
    train_population, window_confusion, window_seconds, CorpusSpec, ExperimentReport, ReportRow, SweepCurve,
    SweepTarget, DEFAULT_HORIZON_S,
};
use preictal_core::ingest::{generate_synthetic, load_recording, write_recording, EegRecording, FileFormat, SeizureSpec, SynthSpec};
use preictal_core::par::Execution;
use preictal_core::pipeline::{run_recording, EngineOptions};
use preictal_core::EngineConfig;
use preictal_service::ServiceOptions;

#[derive(Parser)]
#[command(name = "preictal", version, about = "Seizure prediction and detection engine")]
struct Cli {
    /// Run every batch stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording with annotations.
    Synth(SynthArgs),
    /// Train a detector population from annotated recordings.
    Train(TrainArgs),
    /// Replay one recording and write its event log.
    Run(RunArgs),
    /// Sweep td or tp and write the ROC curve.
    Sweep(SweepArgs),
    /// Score a population on a set of recordings.
    Evaluate(EvaluateArgs),
    /// Host sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

/// Engine settings: a `key=value` file, then individual flags on top.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Detection threshold.
    #[arg(long)]
    td: Option<f64>,
    /// Prediction threshold.
    #[arg(long)]
    tp: Option<f64>,
    /// Consecutive windows needed for an onset.
    #[arg(long)]
    duration: Option<u32>,
    /// Prediction-error threshold scale.
    #[arg(long)]
    gamma: Option<f64>,
    /// Band-pass edges as LOW:HIGH in Hz.
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    gain: Option<f64>,
    /// Window width in half-second frames.
    #[arg(long)]
    w: Option<usize>,
    /// haar or db4.
    #[arg(long)]
    wavelet: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                EngineConfig::from_key_values(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => EngineConfig::default(),
        };
        let flags = [
            ("td", self.td.map(|v| v.to_string())),
            ("tp", self.tp.map(|v| v.to_string())),
            ("duration", self.duration.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("band", self.band.clone()),
            ("gain", self.gain.map(|v| v.to_string())),
            ("w", self.w.map(|v| v.to_string())),
            ("wavelet", self.wavelet.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output file; `.bin`/`.raw`/`.eeg` write raw binary, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 300.0)]
    seconds: f64,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 250)]
    rate: u32,
    /// Seizure as ONSET:DURATION in seconds. Repeatable.
    #[arg(long = "seizure", value_name = "ONSET:DURATION")]
    seizures: Vec<String>,
    #[arg(long, default_value_t = 0)]
    artifacts: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Annotated recordings.
    #[arg(required = true)]
    recordings: Vec<PathBuf>,
    /// Population bundle to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RunArgs {
    recording: PathBuf,
    #[arg(long)]
    population: PathBuf,
    /// Event log to write.
    #[arg(long)]
    events: PathBuf,
    /// Write the population after the run here.
    #[arg(long)]
    population_out: Option<PathBuf>,
    /// Freeze the population: no feedback and no mutation.
    #[arg(long)]
    frozen: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Detection,
    Prediction,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(required = true)]
    recordings: Vec<PathBuf>,
    #[arg(long)]
    population: PathBuf,
    #[arg(long, value_enum, default_value_t = Target::Detection)]
    target: Target,
    /// Grid spacing over [0, 1].
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Curve CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the random-guess baseline curve here.
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Recordings to score. Ignored with `--synthetic`.
    recordings: Vec<PathBuf>,
    /// Population to evaluate. Without it one is trained first.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Training recordings when no population is given.
    #[arg(long = "train")]
    train: Vec<PathBuf>,
    /// Use the seeded synthetic corpus for both training and testing.
    #[arg(long)]
    synthetic: bool,
    /// Corpus seed with `--synthetic`, otherwise the training seed.
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Report as JSON lines: one row per recording, then the aggregate.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Where session event logs are written.
    #[arg(long, default_value = "sessions")]
    data_dir: PathBuf,
}

fn open(path: &Path) -> Result<EegRecording> {
    load_recording(path, FileFormat::from_path(path)).with_context(|| format!("cannot load {}", path.display()))
}

fn open_all(paths: &[PathBuf]) -> Result<Vec<EegRecording>> {
    paths.iter().map(|p| open(p)).collect()
}

fn load_population(path: &Path) -> Result<Population> {
    Population::load(path).with_context(|| format!("cannot load population {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        bail!("--step must lie in (0, 1]");
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| (i as f64 * step).min(1.0)).collect())
}

fn synth(a: SynthArgs) -> Result<()> {
    let seizures = a
        .seizures
        .iter()
        .map(|s| {
            let (on, dur) = s.split_once(':').context("--seizure takes ONSET:DURATION")?;
            Ok(SeizureSpec::new(on.trim().parse()?, dur.trim().parse()?))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SynthSpec {
        channel_count: a.channels,
        sample_rate_hz: a.rate,
        duration_s: a.seconds,
        seizures,
        artifact_bursts: a.artifacts,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let rec = generate_synthetic(&spec)?;
    write_recording(&rec, &a.out, FileFormat::from_path(&a.out))
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    println!("wrote {} ({} channels, {:.1} s)", a.out.display(), rec.channel_count(), rec.duration_s());
    Ok(())
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let cfg = a.config.resolve()?;
    let recs = open_all(&a.recordings)?;
    if recs.iter().all(|r| r.annotations().is_empty()) {
        bail!("no training recording carries seizure annotations");
    }
    let pop = train_population(&recs, &cfg, &AisParams::default(), a.seed, exec)?;
    pop.save(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    println!("trained {} detectors from {} recordings into {}", pop.len(), recs.len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs, exec: Execution) -> Result<()> {
    let cfg = a.config.resolve()?;
    let rec = open(&a.recording)?;
    let pop = load_population(&a.population)?;
    let options = EngineOptions { learning: !a.frozen, mutation: !a.frozen };
    let result = run_recording(&rec, &cfg, pop.with_execution(exec), options)?;
    let events = result.events();
    let mut log = EventLogWriter::open(&a.events).with_context(|| format!("cannot write {}", a.events.display()))?;
    for e in &events {
        log.append(e)?;
    }
    if let Some(p) = &a.population_out {
        result.population.save(p).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let score = score_run(&events, rec.annotations(), DEFAULT_HORIZON_S)?;
    let windows = window_confusion(
        &result.outcomes,
        rec.annotations(),
        window_seconds(&cfg, rec.sample_rate_hz()),
        DEFAULT_HORIZON_S,
    );
    let name = a.recording.file_stem().map_or("recording".into(), |s| s.to_string_lossy().into_owned());
    let report = ExperimentReport::from_rows(
        vec![ReportRow::from_score(&name, &score, rec.duration_s() / 3600.0, windows)],
        &score.lead_times_s,
    );
    print!("{}", report.render_table());
    println!("{} events written to {}", events.len(), a.events.display());
    Ok(())
}

fn sweep(a: SweepArgs, exec: Execution) -> Result<()> {
    let cfg = a.config.resolve()?;
    let recs = open_all(&a.recordings)?;
    let pop = load_population(&a.population)?;
    let target = match a.target {
        Target::Detection => SweepTarget::Detection,
        Target::Prediction => SweepTarget::Prediction,
    };
    let grid = grid(a.step)?;
    let points = threshold_sweep(&recs, &cfg, &pop, &grid, target, exec)?;
    write(&a.out, &curve_csv(&points))?;
    println!("engine AUC {:.3} over {} thresholds, curve in {}", roc_auc(&points), grid.len(), a.out.display());
    if let Some(p) = &a.baseline_out {
        let base = baseline_sweep(&recs, &cfg, &grid, a.seed, target)?;
        write(p, &curve_csv(&base))?;
        println!("random baseline AUC {:.3}, curve in {}", roc_auc(&base), p.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, exec: Execution) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (train, test, seed) = if a.synthetic {
        let corpus = synthetic_corpus(&CorpusSpec { seed: a.seed, ..CorpusSpec::default() }, exec)?;
        (corpus.train, corpus.test, 0)
    } else {
        if a.recordings.is_empty() {
            bail!("give recordings to evaluate or --synthetic");
        }
        (open_all(&a.train)?, open_all(&a.recordings)?, a.seed)
    };
    let pop = match (&a.population, train.is_empty()) {
        (Some(p), _) => load_population(p)?,
        (None, false) => train_population(&train, &cfg, &AisParams::default(), seed, exec)?,
        (None, true) => bail!("give --population or --train recordings"),
    };
    let mut report = evaluate_recordings(&test, &cfg, &pop, DEFAULT_HORIZON_S, exec)?;
    let points = threshold_sweep(&test, &cfg, &pop, &grid(0.05)?, SweepTarget::Detection, exec)?;
    report.curves.push(SweepCurve { name: "detection".into(), points });
    write(&a.report, &report.to_json_lines())?;
    print!("{}", report.render_table());
    println!("detection AUC {:.3}, report in {}", roc_auc(&report.curves[0].points), a.report.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(a.addr).await.with_context(|| format!("cannot bind {}", a.addr))?;
        preictal_service::serve(listener, ServiceOptions { data_dir: a.data_dir }).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_filter = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_filter)),
        )
        .with_writer(std::io::stderr)
        .init();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, exec),
        Command::Run(a) => run(a, exec),
        Command::Sweep(a) => sweep(a, exec),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
