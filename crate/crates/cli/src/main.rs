mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chipheat::hybrid::EvalMode;
use chipheat::Error;
use clap::{Parser, Subcommand, ValueEnum};

use commands::Outcome;
use config::RunConfig;

/// Steady-state chip thermal analysis: finite-difference reference solves,
/// physics-informed operator training, trust-gated evaluation and
/// annealing-based floorplan optimisation.
///
/// Exit codes: 0 success, 2 configuration error, 3 solver did not converge,
/// 4 numeric failure. `CHIPHEAT_THREADS` caps worker threads.
#[derive(Debug, Parser)]
#[command(name = "chipheat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Fd,
    Operator,
    Hybrid,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Fd => EvalMode::FdOnly,
            Mode::Operator => EvalMode::OperatorOnly,
            Mode::Hybrid => EvalMode::Hybrid,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference solve of one design.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Physics-informed training; writes checkpoint.bin and loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Operator prediction of one design on the full mesh.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// MAPE of a trained model against reference solves of random designs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `evaluate.n_designs`.
        #[arg(long)]
        n_designs: Option<usize>,
    },
    /// Simulated-annealing floorplan optimisation.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Overrides `sa.mode`.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Required by the operator and hybrid modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Gradient-flow decay rates of a single Chebyshev layer.
    Ntk {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> chipheat::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.output_dir = Some(cfg.output_dir());
    Ok(cfg)
}

fn run(cli: Cli) -> chipheat::Result<Outcome> {
    match cli.command {
        Command::Solve { common } => commands::solve(&load(&common)?),
        Command::Train { common, resume } => commands::train(&mut load(&common)?, resume),
        Command::Predict { common, checkpoint } => {
            commands::predict(&mut load(&common)?, &checkpoint)
        }
        Command::Evaluate {
            common,
            checkpoint,
            n_designs,
        } => {
            let mut cfg = load(&common)?;
            if let (Some(n), Some(section)) = (n_designs, cfg.evaluate.as_mut()) {
                section.n_designs = n;
            } else if let Some(n) = n_designs {
                cfg.evaluate = Some(config::EvaluateSection {
                    n_designs: n,
                    sampler: None,
                });
            }
            commands::evaluate(&mut cfg, &checkpoint)
        }
        Command::Optimize {
            common,
            mode,
            checkpoint,
        } => commands::optimize(
            &mut load(&common)?,
            mode.map(EvalMode::from),
            checkpoint.as_ref(),
        ),
        Command::Ntk { common } => commands::ntk(&load(&common)?),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Degenerate(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("error: solver did not reach its tolerance");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
