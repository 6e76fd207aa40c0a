//! `resnest-lab`: configuration-driven entry point for dataset generation,
//! training, verification suites, Hessian probes and DenseNEst embedding.
//!
//! Exit codes: 0 success / all checks pass, 1 check failure, 2 usage or
//! config error, 3 numerical divergence, 4 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::PointSource;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "resnest-lab", version, about = "ResNEst / A-ResNEst / DenseNEst laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset as CSV plus a sidecar spec.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured problem from a seeded initialization.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run named verification checks and write JSON/markdown reports.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check names (default: all).
        #[arg(long)]
        checks: Option<String>,
    },
    /// Assemble and classify the prediction-weight Hessian at a point.
    Hessian {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "random")]
        point_source: PointSource,
        /// Saved parameter file (for --point-source file).
        #[arg(long)]
        point: Option<PathBuf>,
    },
    /// Embed a DenseNEst into an output-equivalent wide ResNEst.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Saved DenseNEst parameter file (default: seeded init from the
        /// configured architecture).
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn init_thread_pool() {
    if let Ok(raw) = std::env::var("RESNEST_LAB_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    init_thread_pool();
    match &cli.command {
        Command::GenData { common } => commands::cmd_gen_data(&load(common)?),
        Command::Train { common } => commands::cmd_train(&load(common)?),
        Command::Verify { common, checks } => commands::cmd_verify(&load(common)?, checks.as_deref()),
        Command::Hessian {
            common,
            point_source,
            point,
        } => commands::cmd_hessian(&load(common)?, *point_source, point.as_deref()),
        Command::Embed { common, params } => commands::cmd_embed(&load(common)?, params.as_deref()),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<resnest_core::Error>() {
        return match core {
            resnest_core::Error::Divergence { .. } => 3,
            resnest_core::Error::Io(_) => 4,
            _ => 2,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
