//! Command line front end for the forging surrogate. Subcommands cover the
//! whole loop: generate trajectories, train, roll out, evaluate a grid,
//! ablate the step stride, and query the closed-form thickness predictors.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CmdError;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "forgenet",
    version,
    about = "Surrogate pipeline for tube nosing: data generation, training, rollout",
    after_long_help = config::SCHEMA_HELP
)]
struct Cli {
    /// TOML experiment config; flags override file values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap the worker thread count (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic trajectories (one run, or the full campaign grid)
    Generate {
        /// Output directory for dataset folders
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Logarithmic reduction target; with --alpha selects a single run
        #[arg(long)]
        phi: Option<f64>,
        /// Die half angle in degrees; with --phi selects a single run
        #[arg(long)]
        alpha: Option<f64>,
        /// Friction coefficient override
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Train a model on every non-test dataset under --data
    Train {
        /// Directory holding dataset folders (or one dataset)
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Run directory for checkpoints, loss curve, and logs
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Roll a trained model over one trajectory and write all report CSVs
    Rollout {
        /// Checkpoint directory (as written by train)
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// One dataset directory
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Output directory for the CSV artifacts
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Frames per surrogate step (default: training stride)
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Report windowed thickness error for a model across many datasets
    Evaluate {
        /// Checkpoint directory (as written by train)
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Directory holding dataset folders (or one dataset)
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Optional output directory for abtc_grid.csv
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Frames per surrogate step (default: training stride)
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train one model per stride and tabulate test-set error
    Ablate {
        /// Directory with train- and test-tagged dataset folders
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for ablation.csv
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Strides to compare (default: [eval].strides)
        #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
        strides: Option<Vec<usize>>,
    },
    /// Closed-form wall thickness change predictors (CSV to stdout or --out)
    Analytic {
        /// Initial outer diameter in mm
        #[arg(long)]
        da0: f64,
        /// Final outer diameter in mm (sweep start when --da1-end is given)
        #[arg(long)]
        da1: f64,
        /// Initial wall thickness in mm
        #[arg(long)]
        s0: f64,
        /// Die half angle in degrees
        #[arg(long)]
        alpha: f64,
        /// Friction coefficient (echoed into the CSV)
        #[arg(long, default_value_t = 0.05)]
        mu: f64,
        /// Sweep end for the final diameter
        #[arg(long, value_name = "MM")]
        da1_end: Option<f64>,
        /// Number of sweep rows, endpoints included
        #[arg(long, default_value_t = 25)]
        rows: usize,
        /// Write the CSV here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CmdError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CmdError::Config(format!("cannot size thread pool: {e}")))?;
    }

    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(CmdError::Config)?,
        None => ExperimentConfig::default(),
    };

    match cli.command {
        Command::Generate { out, phi, alpha, mu } => {
            commands::cmd_generate(&out, &cfg, phi, alpha, mu)
        }
        Command::Train { data, out } => commands::cmd_train(&data, &out, &cfg),
        Command::Rollout { checkpoint, dataset, out, stride } => {
            commands::cmd_rollout(&checkpoint, &dataset, &out, stride, &cfg)
        }
        Command::Evaluate { checkpoint, data, out, stride } => {
            commands::cmd_evaluate(&checkpoint, &data, out.as_deref(), stride, &cfg)
        }
        Command::Ablate { data, out, strides } => commands::cmd_ablate(&data, &out, strides, &cfg),
        Command::Analytic { da0, da1, s0, alpha, mu, da1_end, rows, out } => {
            commands::cmd_analytic(da0, da1, s0, alpha, mu, da1_end, rows, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
