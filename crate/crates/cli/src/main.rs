//! `vdu` — config-driven experiment runner for diffusion unlearning.
//!
//! A full experiment is five commands against one TOML config:
//!
//! ```text
//! vdu pretrain --config configs/mixture8.toml   # train N models, save checkpoints
//! vdu stats    --config configs/mixture8.toml   # estimate (mu*, sigma*)
//! vdu unlearn  --config configs/mixture8.toml   # run the unlearning loop at one gamma
//! vdu eval     --config configs/mixture8.toml   # score theta_u vs theta*
//! vdu sweep    --config configs/mixture8.toml   # unlearn + eval across a gamma grid
//! vdu finetune --config configs/mixture8.toml   # retain-set fine-tuning reference
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 numerical abort, 4 I/O error.

mod commands;
mod config;
mod plot;

use clap::{Args, Parser, Subcommand};
use config::{Experiment, SeedOverride};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "vdu",
    version,
    about = "Diffusion unlearning experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the command's seed: pretrain re-seeds its runs from this
    /// value, unlearn/sweep replace the unlearning seed, eval replaces
    /// the sampling seed. stats takes no seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured pre-training runs and save checkpoints.
    Pretrain(CommonArgs),
    /// Estimate parameter-posterior statistics from saved checkpoints.
    Stats(CommonArgs),
    /// Run the unlearning loop at the configured gamma.
    Unlearn(CommonArgs),
    /// Evaluate the persisted unlearned model against the pre-trained one.
    Eval(CommonArgs),
    /// Unlearn and evaluate across the configured gamma grid.
    Sweep(CommonArgs),
    /// Fine-tune theta* on the retain split; the reference baseline.
    Finetune(CommonArgs),
}

fn load(args: &CommonArgs, seed_kind: fn(u64) -> SeedOverride) -> anyhow::Result<Experiment> {
    let seed = args.seed.map(seed_kind).unwrap_or(SeedOverride::None);
    Experiment::load(&args.config, args.out.clone(), seed)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pretrain(a) => commands::cmd_pretrain(&load(&a, SeedOverride::Pretrain)?),
        Command::Stats(a) => commands::cmd_stats(&load(&a, |_| SeedOverride::None)?),
        Command::Unlearn(a) => commands::cmd_unlearn(&load(&a, SeedOverride::Unlearn)?),
        Command::Eval(a) => commands::cmd_eval(&load(&a, SeedOverride::Eval)?),
        Command::Sweep(a) => commands::cmd_sweep(&load(&a, SeedOverride::Unlearn)?),
        Command::Finetune(a) => commands::cmd_finetune(&load(&a, SeedOverride::Eval)?),
    }
}

/// 2 for config problems, 3 for numerical aborts, 4 for I/O trouble —
/// checked against the deepest recognizable cause in the chain.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<vdu_core::Error>() {
            return match core {
                vdu_core::Error::NumericalAbort(_) | vdu_core::Error::NonFinite(_) => 3,
                vdu_core::Error::Io(_) | vdu_core::Error::Format(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
