//! Command-line driver: configuration, the five subcommands, and argument
//! handling shared by the binary and its tests.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use moped_core::moped::Variant;

use crate::commands::{usage, Init};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "moped", version, about = "MLE-initialized mean-field variational inference")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment description; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo draws at evaluation time.
    #[arg(long, global = true)]
    pub mc_samples: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Moped,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Scaled,
    Perturb,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage 1: maximum-likelihood training.
    TrainMle,
    /// Stage 2: variational training from a MOPED or random initialization.
    TrainVi {
        #[arg(long, value_enum, default_value = "moped")]
        init: InitArg,
        #[arg(long)]
        mle_checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        rho_bar: Option<f64>,
        #[arg(long)]
        delta_rho: Option<f64>,
    },
    /// Monte Carlo predictions, uncertainty and retained-data curves on the test set.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// In- vs out-of-distribution uncertainty.
    Ood {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Recomputes metrics from a prediction dump.
    Curves {
        #[arg(long)]
        predictions: PathBuf,
    },
}

/// Loads the config file (or defaults) and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.apply_seed(seed);
    }
    if let Some(out) = &cli.common.out {
        config.out = out.clone();
    }
    if let Some(t) = cli.common.mc_samples {
        config.mc_samples = t;
    }
    if let Command::TrainVi {
        variant,
        delta,
        rho_bar,
        delta_rho,
        ..
    } = &cli.command
    {
        if let Some(v) = variant {
            config.moped.variant = match v {
                VariantArg::Scaled => Variant::Scaled,
                VariantArg::Perturb => Variant::Perturb,
            };
        }
        config.moped.delta = delta.unwrap_or(config.moped.delta);
        config.moped.rho_bar = rho_bar.unwrap_or(config.moped.rho_bar);
        config.moped.delta_rho = delta_rho.unwrap_or(config.moped.delta_rho);
    }
    if config.mc_samples == 0 {
        return Err(usage("mc_samples must be at least 1"));
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::TrainMle => commands::train_mle_cmd(&config).map(drop),
        Command::TrainVi { init, mle_checkpoint, .. } => {
            let init = match init {
                InitArg::Moped => Init::Moped,
                InitArg::Random => Init::Random,
            };
            commands::train_vi_cmd(&config, init, mle_checkpoint.as_deref()).map(drop)
        }
        Command::Evaluate { checkpoint } => commands::evaluate_cmd(&config, checkpoint).map(drop),
        Command::Ood { checkpoint } => commands::ood_cmd(&config, checkpoint),
        Command::Curves { predictions } => commands::curves_cmd(&config, predictions).map(drop),
    }
}
