use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srampuf_core::pipeline::{run_stages, RunConfig, Stage};
use srampuf_core::Error;

/// Behavioral SRAM power-up simulator and PUF cell-selection study.
#[derive(Debug, Parser)]
#[command(name = "srampuf", version)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Technology profile (TOML), overriding the configuration.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Draw the Monte Carlo population.
    Sample,
    /// Noise-free power-up of every cell, plus curves for the example cell.
    Powerup,
    /// Weight-factor fit, overlap threshold, MF and SID tables.
    Metrics,
    /// Noisy repeatability trials.
    Noise,
    /// Temperature sweep against the reference temperature.
    Tempsweep,
    /// Reliable-cell classification.
    Classify,
    /// Top-k selection, random baselines and response-length study.
    Select,
    /// Summary statistics and figures.
    Report,
    /// Every stage in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Sample => vec![Stage::Sample],
            Command::Powerup => vec![Stage::PowerUp],
            Command::Metrics => vec![Stage::Metrics],
            Command::Noise => vec![Stage::Noise],
            Command::Tempsweep => vec![Stage::TempSweep],
            Command::Classify => vec![Stage::Classify],
            Command::Select => vec![Stage::Select],
            Command::Report => vec![Stage::Report],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_io() {
        4
    } else {
        3
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = &cli.profile {
        cfg.profile = Some(p.clone());
    }
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("--workers must be >= 1".into()));
    }
    let manifest = run_stages(&cfg, &cli.command.stages(), workers)?;
    println!(
        "{} file(s) written to {}",
        manifest.files.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
