use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warpnorm::commands;
use warpnorm::{CliError, Threads};
use warpnorm_core::normalize::NormVariant;

#[derive(Parser)]
#[command(
    name = "warpnorm",
    version,
    about = "Warped spatially-adaptive normalization experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Finite-difference checks of every adjoint.
    Gradcheck {
        /// Comma-separated op names; all ops when omitted.
        #[arg(long, value_delimiter = ',')]
        ops: Vec<String>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// SAN / SAWS / SAWN ablation.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose-transfer pretraining followed by part-replacement finetuning.
    Stpr {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump a scene's flow, warp, occlusion and generated image.
    Visualize {
        #[arg(long, default_value_t = 0)]
        scene_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rotate(12)")]
        motion: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "sawn")]
        variant: NormVariant,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut stdout = std::io::stdout();
    let exec = Threads::from_env();
    match cli.cmd {
        Cmd::Gradcheck { ops, seeds, tol } => commands::gradcheck(&ops, seeds, tol, &mut stdout),
        Cmd::Ablate { config, out } => {
            Ok(commands::ablate(config.as_deref(), &out, &exec, &mut stdout)?.pass())
        }
        Cmd::Stpr { config, out } => {
            Ok(commands::stpr(config.as_deref(), &out, &exec, &mut stdout)?.pass())
        }
        Cmd::Visualize {
            scene_seed,
            out,
            motion,
            checkpoint,
            variant,
        } => commands::visualize(scene_seed, &motion, checkpoint.as_deref(), variant, &out)
            .map(|()| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
