//! `drivestyle`: extract features, describe, embed, train, evaluate and
//! ablate driving-style classifiers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drivestyle::model::Variant;

use crate::commands::{Context, SplitChoice};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "drivestyle", version, about = "Driving-style classification pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (required when no config is given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Never contact remote services; use the local describer and encoder.
    #[arg(long, global = true)]
    offline: bool,
    /// Output directory (defaults to the configured one, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and clean segment CSVs and write the feature matrix.
    Extract {
        /// Directory of segment CSV files (defaults to the configured data dir).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Hard-event threshold shared by all events.
        #[arg(long)]
        tau: Option<f64>,
        /// Skip unreadable files instead of failing.
        #[arg(long)]
        skip_bad: bool,
    },
    /// Generate text descriptions for each feature row.
    Describe {
        #[arg(long)]
        features: PathBuf,
    },
    /// Embed descriptions into fixed-length vectors.
    Embed {
        #[arg(long)]
        descriptions: PathBuf,
    },
    /// Write the synthetic labeled segment set.
    Synth {
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Train one model variant and write a checkpoint.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "full")]
        variant: Variant,
        /// Select the checkpoint by training-set accuracy (memorization runs).
        #[arg(long)]
        select_on_train: bool,
    },
    /// Evaluate a checkpoint on one split of a feature table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Train and evaluate all five variants.
    Ablate {
        #[arg(long)]
        features: PathBuf,
    },
    /// Correlation matrix and per-class feature distributions.
    Report {
        #[arg(long)]
        features: PathBuf,
        /// Features to estimate densities for (default: the behavior features).
        #[arg(long = "feature")]
        names: Vec<String>,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match (&cli.config, cli.seed) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(seed)) => RunConfig::with_seed(seed),
        (None, None) => return Err(CliError::Config("a seed is required: pass --config or --seed".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Extract { tau: Some(tau), .. } = cli.command {
        cfg.tau = tau;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(Context {
        cfg,
        out,
        offline: cli.offline,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli)?;
    match &cli.command {
        Command::Extract { input, skip_bad, .. } => {
            let input = input
                .clone()
                .or_else(|| ctx.cfg.paths.data_dir.clone())
                .ok_or_else(|| CliError::Config("no input directory: pass --input or set paths.data_dir".into()))?;
            commands::extract(&ctx, &input, *skip_bad)
        }
        Command::Describe { features } => commands::describe(&ctx, features),
        Command::Embed { descriptions } => commands::embed(&ctx, descriptions),
        Command::Synth { n_per_class } => commands::synth(&ctx, *n_per_class),
        Command::Train {
            features,
            variant,
            select_on_train,
        } => commands::train_cmd(&ctx, features, *variant, *select_on_train),
        Command::Eval {
            checkpoint,
            features,
            split,
        } => commands::eval_cmd(&ctx, checkpoint, features, *split),
        Command::Ablate { features } => commands::ablate(&ctx, features),
        Command::Report { features, names } => commands::report(&ctx, features, names),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
