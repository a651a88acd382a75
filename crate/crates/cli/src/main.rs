mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::exit::Failure;

/// Functional and recursive marginal quantization of path-dependent volatility models.
#[derive(Debug, Parser)]
#[command(name = "pathquant", version)]
struct Cli {
    /// Run configuration (INI)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides `scheme.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache optimal scalar Gaussian quantizers
    Grids {
        /// Levels as `a..b` (inclusive) or a comma list
        #[arg(long, default_value = "1..32")]
        levels: String,
    },
    /// Integrate the codeword bundle and write it as CSV
    Quantize,
    /// Zero-coupon-bond prices by quantization and/or Monte Carlo
    Price,
    /// Recursive marginal quantization grids and transitions
    Rmq {
        /// Report Σ w f(x) for this coordinate (y, y_g1, y_g2, y_h1, y_h2)
        #[arg(long, requires = "at")]
        expect: Option<String>,
        /// Step at which to evaluate `--expect`
        #[arg(long, requires = "expect")]
        at: Option<usize>,
    },
}

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::validation("--config is required for this command"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.scheme.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match &cli.command {
        Command::Grids { levels } => {
            let levels = commands::parse_levels(levels)?;
            // explicit --out wins over the environment, which wins over the config
            let dir = match (&cli.out, std::env::var_os(commands::CACHE_ENV)) {
                (Some(out), _) => out.clone(),
                (None, Some(env)) => PathBuf::from(env),
                (None, None) => match &cli.config {
                    Some(_) => load(&cli)?.quantizer.cache.unwrap_or_else(|| PathBuf::from("grids")),
                    None => PathBuf::from("grids"),
                },
            };
            commands::grids(&levels, &dir)
        }
        Command::Quantize => commands::quantize(&load(&cli)?),
        Command::Price => commands::price(&load(&cli)?),
        Command::Rmq { expect, at } => {
            let cfg = load(&cli)?;
            commands::rmq(&cfg, expect.as_deref().zip(*at))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_of(&e))
        }
    }
}
