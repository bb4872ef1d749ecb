//! `flgpr`: runs the detection chain stage by stage from a TOML experiment
//! config, persisting every intermediate artifact under the output directory.

mod artifacts;
mod config;
mod plot;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::artifacts::Layout;
use crate::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "flgpr", version, about = "Buried-target detection in forward-looking GPR imagery")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for stage-internal parallelism (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Synthesize the configured lanes.
    Generate,
    /// RX prescreening and halo scoring of every lane.
    Prescreen,
    /// Patch extraction and per-alarm features for every channel.
    Extract,
    /// Fit codebooks and classifiers for every algorithm and lane fold.
    Train,
    /// Leave-one-lane-out pAUC of every algorithm, with cross-fitted predictions.
    Evaluate,
    /// SFS decision fusion over the first-stage predictions.
    Fuse,
    /// Confidence maps and dictionary atoms of a BOV(Raw) PLSDA fold model.
    Confmap,
    /// Results table, averaged ROC curves and figures.
    Report,
    /// Every stage in order.
    All,
    /// Print the effective config (defaults filled in) as TOML.
    ShowConfig,
}

const PIPELINE: [Command; 8] =
    [Command::Generate, Command::Prescreen, Command::Extract, Command::Train, Command::Evaluate, Command::Fuse, Command::Confmap, Command::Report];

fn run_stage(cmd: Command, layout: &Layout) -> Result<String> {
    match cmd {
        Command::Generate => stages::generate(layout),
        Command::Prescreen => stages::prescreen(layout),
        Command::Extract => stages::extract(layout),
        Command::Train => stages::train(layout),
        Command::Evaluate => stages::evaluate(layout),
        Command::Fuse => stages::fuse(layout),
        Command::Confmap => stages::confmap(layout),
        Command::Report => stages::report(layout),
        Command::All | Command::ShowConfig => unreachable!("not a single stage"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = cli.config.context("--config PATH is required")?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    if cli.command == Command::ShowConfig {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let layout = Layout::new(&cfg);
    let stages: Vec<Command> = if cli.command == Command::All { PIPELINE.to_vec() } else { vec![cli.command] };
    for s in stages {
        println!("{}", run_stage(s, &layout)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
