use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Overrides;

/// Surrogate-driven 4D respiratory motion models.
#[derive(Debug, Parser)]
#[command(name = "respmodel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file (pipeline settings, population, signal simulation).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Working grid size per axis (power of two, 32..=256).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom population with ground truth.
    Phantom,
    /// Register all phases of a 4D dataset and fit its motion model.
    Fit {
        /// Dataset directory or manifest.
        dataset: PathBuf,
    },
    /// Build a mean motion atlas from several 4D datasets.
    Atlas {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Reference patient id (default: smallest id).
        #[arg(long)]
        reference: Option<String>,
    },
    /// Transfer an atlas onto a new static volume.
    Transfer {
        atlas: PathBuf,
        /// New reference-state volume (.rvf).
        image: PathBuf,
    },
    /// Render breathing frames from a motion model.
    Animate {
        model: PathBuf,
        /// Reference-state volume (.rvf).
        image: PathBuf,
        /// Surrogate CSV (t_s,v_ml) driving the frames.
        #[arg(long, conflicts_with = "simulate")]
        signal: Option<PathBuf>,
        /// Drive the frames with a simulated surrogate.
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Leave-one-out DICE evaluation of a population directory.
    Evaluate {
        population: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let overrides = Overrides {
        config: cli.common.config,
        out: cli.common.out,
        resolution: cli.common.resolution,
        seed: cli.common.seed,
    };
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(commands::EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let result = config::load(&overrides).and_then(|cfg| match cli.command {
        Command::Phantom => commands::phantom(&cfg),
        Command::Fit { dataset } => commands::fit(&cfg, &dataset),
        Command::Atlas { datasets, reference } => commands::atlas(&cfg, &datasets, reference.as_deref()),
        Command::Transfer { atlas, image } => commands::transfer(&cfg, &atlas, &image),
        Command::Animate {
            model,
            image,
            signal,
            simulate,
            frames,
        } => commands::animate(&cfg, &model, &image, signal.as_deref(), simulate, frames),
        Command::Evaluate { population } => commands::evaluate(&cfg, &population),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
