mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

/// Synthetic multi-object tracking: scenario generation, online tracking,
/// evaluation, ablations and loss verification.
#[derive(Debug, Parser)]
#[command(name = "quasitrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario and write gt.txt and detections.jsonl.
    Synth(SynthArgs),
    /// Track a detections file and write MOT-format results.
    Track(TrackArgs),
    /// Score a results file against ground truth.
    Eval(EvalArgs),
    /// Run the loss/similarity/inference ablation grid over seeds.
    Ablate(AblateArgs),
    /// Verify loss gradients and identities on random instances.
    Losscheck(LosscheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML scenario and noise settings; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "bisoftmax")]
    similarity: String,
    #[arg(long)]
    no_backdrops: bool,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long, default_value_t = 0.8)]
    tau_init: f64,
    #[arg(long, default_value_t = 0.5)]
    tau_obj: f64,
    #[arg(long, default_value_t = 0.5)]
    tau_match: f64,
    /// Frames a lost track stays matchable.
    #[arg(long, default_value_t = 10)]
    memory: u64,
    #[arg(long, default_value_t = 0.8)]
    momentum: f64,
    #[arg(long, default_value = "internal", value_parser = ["internal", "external"])]
    init_source: String,
    /// MOT file of boxes allowed to start tracks (with --init-source external).
    #[arg(long)]
    external_inits: Option<PathBuf>,
    /// Expected embedding dimension; the file must agree.
    #[arg(long)]
    dim: Option<usize>,
    /// Associate by the identity labels stored in the detections file.
    #[arg(long)]
    identity_oracle: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_gate: f64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// TOML scenario and noise settings replacing the built-in benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Extra oracle rows: detection or tracking. Repeatable.
    #[arg(long, value_parser = ["detection", "tracking"])]
    oracle: Vec<String>,
    /// Descent steps per embedding fit.
    #[arg(long)]
    steps: Option<usize>,
    /// Leading frames used for fitting.
    #[arg(long)]
    train_frames: Option<usize>,
}

#[derive(Debug, Args)]
struct LosscheckArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = quasitrack::losscheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Scale analytic anchor gradients by (1 + F) to exercise the harness.
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_fault: f64,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("QUASITRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("QUASITRACK_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Track(a) => commands::track(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Losscheck(a) => commands::losscheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
