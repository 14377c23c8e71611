//! Command-line interface for training, evaluating, gradient-checking, and
//! ablating proxy-graph metric-learning models.
//!
//! Exit codes: 0 success, 1 usage or configuration problems, 2 runtime
//! faults (I/O, corrupt files, numeric failures, failed gradient checks).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use proxygml::config::RunConfig;
use proxygml::gradcheck::{gradcheck, GradCheckOptions};
use proxygml::train::{ablate, evaluate_checkpoint, train};
use proxygml::Error;

#[derive(Parser)]
#[command(
    name = "proxygml",
    version,
    about = "Proxy-graph metric learning: train, evaluate, gradcheck, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to a key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file (.csv or binary).
    #[arg(long)]
    data: PathBuf,
    /// Retrieval depths to report.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    ns: Vec<usize>,
    /// Hold out the last N classes as the test split before evaluating.
    #[arg(long)]
    test_classes: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional configuration; defaults to a small linear-head setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corrupt one analytic gradient entry to prove the checker catches it.
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Path to a key = value configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics + checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train every toggle combination and summarize them.
    Ablate(AblateArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Parse(_) => 1,
        _ => 2,
    }
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Train(args) => {
            let mut cfg = RunConfig::from_file(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(out) = args.out {
                cfg.out = Some(out);
            }
            let outcome = train(&cfg)?;
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("metrics: {}", outcome.metrics_path.display());
            match outcome.final_loss_total {
                Some(loss) => println!(
                    "trained {} epochs, final loss {loss:.6}",
                    outcome.epochs_run
                ),
                None => println!("initialized only (0 epochs requested)"),
            }
            let report = serde_json::to_string(&outcome.final_eval)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            println!("{report}");
            Ok(0)
        }
        Command::Evaluate(args) => {
            let mut ns = args.ns.clone();
            ns.sort_unstable();
            ns.dedup();
            let report = evaluate_checkpoint(&args.checkpoint, &args.data, &ns, args.test_classes)?;
            let json = serde_json::to_string(&report)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            println!("{json}");
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let cfg = match &args.config {
                Some(path) => RunConfig::from_file(path)?,
                None => RunConfig::gradcheck_default(),
            };
            let options = GradCheckOptions {
                corrupt: args.corrupt,
                ..GradCheckOptions::default()
            };
            let report = gradcheck(&cfg, &options)?;
            let json = serde_json::to_string(&report)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            println!("{json}");
            if report.passed {
                Ok(0)
            } else {
                eprintln!(
                    "gradient check failed: {} at relative error {:.3e} (tolerance {:.1e})",
                    report.worst_block, report.max_rel_err, report.tolerance
                );
                Ok(2)
            }
        }
        Command::Ablate(args) => {
            let cfg = RunConfig::from_file(&args.config)?;
            let rows = ablate(&cfg)?;
            let json = serde_json::to_string_pretty(&rows)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            println!("{json}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
