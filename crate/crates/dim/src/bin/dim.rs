//! Command-line front end: train models, attack them, build reports, and
//! render latent-space scatters.

use clap::{Parser, Subcommand};
use dim::cli::{self, RunConfig};
use dim::error::DimError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dim", version, about = "Adversarial-robustness workbench for MNIST")]
struct Cli {
    /// Sectioned key-value config file; defaults reproduce the reference
    /// training setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset root holding the four MNIST idx files (overrides config and
    /// the DIM_DATA_DIR environment variable).
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Run directory for checkpoints, archives, reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed; every stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bundle (dim, bidim, cnn, bicnn, madry, single_im,
    /// dn_single_im, im_only).
    Train {
        #[arg(long)]
        model: String,
    },
    /// Run attacks against a trained bundle.
    Attack {
        #[arg(long)]
        model: String,
        /// Preset name (fast, full) or comma-separated NORM:Attack entries.
        #[arg(long)]
        attacks: Option<String>,
    },
    /// Build the distance table and emit report.csv / report.md.
    Report,
    /// Embed internal-model latents and emit one scatter per model.
    Tsne {
        #[arg(long)]
        model: String,
    },
    /// Print a bundle's clean test accuracy.
    Accuracy {
        #[arg(long)]
        model: String,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, DimError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), DimError> {
    let mut cfg = effective_config(cli)?;
    let data = cli.data.as_deref();
    match &cli.command {
        Command::Train { model } => {
            let dir = cli::cmd_train(&cfg, model, data)?;
            println!("trained {model} -> {}", dir.display());
        }
        Command::Attack { model, attacks } => {
            if let Some(spec) = attacks {
                cfg.attack.attacks = cli::parse_attack_list(spec)?;
            }
            let list = cfg.attack.attacks.clone();
            let dirs = cli::cmd_attack(&cfg, model, &list, data)?;
            println!(
                "wrote {} archives under {}",
                dirs.len(),
                cfg.out_dir.join("archives").display()
            );
        }
        Command::Report => {
            let dir = cli::cmd_report(&cfg, data)?;
            println!("report -> {}", dir.display());
        }
        Command::Tsne { model } => {
            let dir = cli::cmd_tsne(&cfg, model, data)?;
            println!("scatters -> {}", dir.display());
        }
        Command::Accuracy { model } => {
            let acc = cli::cmd_accuracy(&cfg, model, data)?;
            println!("{model} clean accuracy: {:.2}%", acc * 100.0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // Numeric failures (training blew up) vs usage/config errors.
                DimError::Divergence { .. } | DimError::NonFiniteGradient(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
