//! Experiment runner: frequency maps, shaper design, ILC runs and
//! controller comparisons, all driven by one TOML config with CLI overrides.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use delta_ilc::config::ExperimentConfig;

mod commands;

#[derive(Parser)]
#[command(
    name = "delta-ilc",
    about = "Delta robot input shaping and iterative learning control toolkit",
    version
)]
struct Cli {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed (overrides the config's sim.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dotted-path config override, e.g. --set sim.iterations=5 (repeatable;
    /// flags win over the file).
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,

    /// Worker threads for the parallel sweeps (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    parallel: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// First-natural-frequency map over the sampled workspace (CSV).
    FreqMap,
    /// Grid-search shaper design; writes the shaper spec and the J surface (CSV).
    DesignShaper,
    /// Full pipeline: trajectory, optional shaping, ILC run, reports.
    Run,
    /// Run every configured controller on the identical plant and compare.
    Compare,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if cli.parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.parallel)
            .build_global()
            .context("thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.parallel > 0 {
        eprintln!("note: built without the parallel feature; --parallel ignored");
    }

    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        let dir = out.to_str().context("output path must be valid UTF-8")?;
        overrides.push(format!("output.dir=\"{dir}\""));
    }

    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)
            .with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::from_toml("", &overrides)?,
    };
    if config.output.dir.as_os_str().is_empty() {
        bail!("output directory must not be empty");
    }
    std::fs::create_dir_all(&config.output.dir)
        .with_context(|| format!("creating {}", config.output.dir.display()))?;

    match cli.command {
        Command::FreqMap => commands::freq_map(&config),
        Command::DesignShaper => commands::design_shaper(&config),
        Command::Run => commands::run(&config),
        Command::Compare => commands::compare(&config),
    }
}
