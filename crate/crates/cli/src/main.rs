//! `cardioview` command-line front end.
//!
//! Every subcommand prints one JSON object on stdout and writes any larger
//! artifacts to files. Exit codes: 0 success, 1 usage, contract or format
//! error (and failed `srg-check` suites), 2 numeric fault.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cardioview",
    version,
    about = "Cardiac standard-view simulation, scoring and probe-control learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON); missing keys take defaults, unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration's.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate procedural phantom volumes.
    GenPhantom {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Fit Gaussian priors on standard views (volumes or masks in a directory).
    FitPriors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one mask against priors.
    ScoreView {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        priors: PathBuf,
    },
    /// Slice a volume at its standard pose turned about the probe axes.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        volume: PathBuf,
        /// Output mask header (labels go to a sibling .raw file).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rx: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        ry: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rz: f64,
        /// Also write a grayscale PGM preview.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Train a double-DQN probe controller.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phantoms: Option<PathBuf>,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Weights blob (its manifest is `<out>.json`); metrics.jsonl and
        /// run_config.json go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of trained weights.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of phantom volumes.
        #[arg(long, conflicts_with = "volume")]
        phantoms: Option<PathBuf>,
        /// A single phantom volume.
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 40)]
        episodes: usize,
        /// Report file (the same JSON as stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step episode log (JSONL).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the SRG block's shape, invariant and gradient suites and the toy fit.
    SrgCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Toy-task training steps.
        #[arg(long, default_value_t = 2000)]
        toy_steps: usize,
    },
}

fn init_logging() {
    let filter = std::env::var("CARDIOVIEW_LOG").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
