mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icgm_core::Exec;
use log::{error, info};

use commands::{usage, CmdResult, Outcome, EXIT_PARTIAL};
use config::{Overrides, RunConfig};

/// Graph-matching fracture classifier: build graphs, train, evaluate, explain.
///
/// Settings come from built-in defaults, then the `--config` TOML file, then
/// flags. Every command writes the resolved configuration to
/// `<out>/resolved_config.toml`; passing that file back as `--config`
/// reproduces the run.
#[derive(Parser, Debug)]
#[command(name = "icgm", version)]
struct Cli {
    /// TOML configuration file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; every other seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of independent runs, each with a derived seed and its own split.
    #[arg(long, global = true)]
    repeat: Option<usize>,
    /// Run without the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build one graph per annotated subject and a split manifest.
    BuildGraphs {
        /// Directory of `<subject_id>.json` annotation files.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Subject table CSV with labels and clinical/BMD columns.
        #[arg(long)]
        subjects: Option<PathBuf>,
        /// Precomputed radiomics CSV.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Generate a synthetic cohort.
    Synth {
        /// TOML synthetic-cohort spec; replaces the `[synth]` section.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train and save a checkpoint with its loss curve.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate checkpoints by template matching and majority voting.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Acceptance threshold (defaults to train.theta_test).
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Rank feature slots by sensitivity drop and evaluate top-K subsets.
    Explain {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Acceptance threshold (defaults to train.theta_explain).
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Train and evaluate over the architecture grid.
    Sweep {
        #[command(flatten)]
        data: DataArg,
    },
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset manifest JSON.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckpointArg {
    /// Checkpoint file; repeat the flag to evaluate several.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildGraphs { .. } => "build-graphs",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Explain { .. } => "explain",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        repeat: cli.repeat,
        ..Default::default()
    };
    match &cli.command {
        Command::BuildGraphs { annotations, subjects, features } => {
            o.annotations = annotations.clone();
            o.subjects = subjects.clone();
            o.features = features.clone();
        }
        Command::Synth { spec } => o.synth_spec = spec.clone(),
        Command::Train { data, steps } => {
            o.data = data.data.clone();
            o.steps = *steps;
        }
        Command::Eval { data, ckpt, theta } => {
            o.data = data.data.clone();
            o.checkpoints = ckpt.checkpoints.clone();
            o.theta_test = *theta;
        }
        Command::Explain { data, ckpt, theta } => {
            o.data = data.data.clone();
            o.checkpoints = ckpt.checkpoints.clone();
            o.theta_explain = *theta;
        }
        Command::Sweep { data } => o.data = data.data.clone(),
    }
    o
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = RunConfig::resolve(cli.config.as_deref(), overrides(cli)).map_err(usage)?;
    let name = cli.command.name();
    let snapshot = cfg.write_snapshot(name).map_err(usage)?;
    info!("resolved configuration written to {}", snapshot.display());
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::BuildGraphs { .. } => commands::build_graphs(&cfg, exec),
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Train { .. } => commands::train_cmd(&cfg, exec),
        Command::Eval { .. } => commands::eval(&cfg, exec),
        Command::Explain { .. } => commands::explain(&cfg, exec),
        Command::Sweep { .. } => commands::sweep_cmd(&cfg, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(msg)) => {
            error!("{msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(f) => {
            error!("{f}");
            ExitCode::from(f.code)
        }
    }
}
