//! `stylseg` command-line interface.
//!
//! Exit codes: 0 on success, 1 for user or input errors, 2 for internal or
//! numerical failures.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "stylseg",
    version,
    about = "One-shot diffusion stylization for segmentation under domain shift"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed applied to every component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. `--set style.n=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source, target and mixed-style datasets.
    SynthData,
    /// Pretrain the diffusion autoencoder and the embedder on `paths.data`.
    TrainDiffae,
    /// One-shot style training from `paths.source_image` and `paths.target_image`.
    TrainStyle,
    /// Stylize every image of `paths.input`; masks are copied through.
    Stylize,
    /// Train a segmenter on the labelled dataset `paths.data`.
    TrainSeg,
    /// Score a segmenter (or `paths.predictions`) on the labelled `paths.test`.
    Evaluate,
    /// Comparison table and radar data from evaluation CSVs (`name=path` or path).
    Report {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::TrainDiffae => "train-diffae",
            Command::TrainStyle => "train-style",
            Command::Stylize => "stylize",
            Command::TrainSeg => "train-seg",
            Command::Evaluate => "evaluate",
            Command::Report { .. } => "report",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let out = cli
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write_to(&out)?;
    match &cli.command {
        Command::SynthData => commands::synth_data(&cfg, &out),
        Command::TrainDiffae => commands::train_diffae_cmd(&cfg, &out),
        Command::TrainStyle => commands::train_style(&cfg, &out),
        Command::Stylize => commands::stylize(&cfg, &out),
        Command::TrainSeg => commands::train_seg(&cfg, &out),
        Command::Evaluate => commands::evaluate(&cfg, &out),
        Command::Report { inputs } => {
            let rows = report::collect(inputs)?;
            report::write_report(&rows, &out)?;
            print!("{}", report::table_text(&rows));
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<stylseg::Error>() {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
