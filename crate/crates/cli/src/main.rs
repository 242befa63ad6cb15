//! `glrtml` command-line driver: synthetic data generation, training,
//! target-domain adaptation and retrieval evaluation from one TOML config.

mod commands;
mod config;
mod error;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use glrtml::model::GlrtVariant;

use crate::commands::Context;
use crate::config::{Metric, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "glrtml", version, about = "Likelihood-ratio metric learning for retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `io.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Hypothesis model family (overrides `glrt.variant`).
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
    /// Similarity used for ranking (overrides `retrieval.metric`).
    #[arg(long, global = true, value_enum)]
    metric: Option<Metric>,
    /// Print the fully resolved config as TOML and exit.
    #[arg(long, global = true)]
    emit_effective_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write source and target train/query/gallery CSV splits.
    Gen,
    /// Train the embedder and hypothesis model on the source train split.
    Train,
    /// Re-estimate the hypothesis model on the unlabeled target domain.
    Adapt,
    /// Retrieval metrics on a query/gallery split.
    Eval,
    /// Full query-by-gallery score table.
    Score,
    /// ROC of relevant versus irrelevant query/gallery pairs.
    Roc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Mg,
    Gmm,
}

fn resolve(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    cfg.resolve_seed();
    if let Some(v) = cli.variant {
        cfg.glrt.variant = match v {
            VariantArg::Mg => GlrtVariant::Mg,
            VariantArg::Gmm => GlrtVariant::Gmm,
        };
    }
    if let Some(m) = cli.metric {
        cfg.retrieval.metric = m;
    }
    if let Some(out) = &cli.out {
        cfg.io.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.io.out_dir.clone();
    Ok(Context { cfg, out })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = resolve(cli)?;
    if cli.emit_effective_config {
        print!("{}", ctx.cfg.to_toml()?);
        return Ok(());
    }
    match cli.command {
        Command::Gen => commands::cmd_gen(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Adapt => commands::cmd_adapt(&ctx),
        Command::Eval => commands::cmd_eval(&ctx),
        Command::Score => commands::cmd_score(&ctx),
        Command::Roc => commands::cmd_roc(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
