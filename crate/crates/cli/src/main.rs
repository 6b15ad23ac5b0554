//! `bimg`: training, evaluation, synthesis, phantom generation and
//! disentanglement panels.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bimg_core::synthlab::SidePolicy;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bimg", version, about = "Bilateral mammogram asymmetry toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train classifier and decoder.
    Train,
    /// Evaluate a checkpoint on the test split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        no_overlays: bool,
    },
    /// Insert tumors into the symmetric pairs of a manifest.
    Synthesize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "random")]
        policy: SidePolicy,
    },
    /// Write a phantom dataset with train/val/test manifests.
    PhantomGen {
        #[arg(long, default_value_t = 400)]
        pairs: usize,
        /// Per-side lesion probability.
        #[arg(long, default_value_t = 0.5)]
        lesion_rate: f64,
    },
    /// Write input, normal, abnormal and CAM panels per pair.
    Disentangle {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 3 })
        }
    }
}
