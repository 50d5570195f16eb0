use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use amor::config::{ConfigError, ExperimentConfig};
use amor::scenario::{self, ScenarioError, ScenarioKind};

#[derive(Parser)]
#[command(name = "amor", version, about = "AMOR magnetometer simulator with coherent or squeezed probe light")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static rotation versus bias field under continuous pumping.
    DcSweep(RunArgs),
    /// Lock-in X/Y across both magnetic resonances.
    LockinSweep(RunArgs),
    /// Analyzer noise floors for coherent and squeezed probes.
    SaCompare(RunArgs),
    /// Sensitivity spectra and plateau improvement.
    Sensitivity(RunArgs),
    /// Signal, noise floors and SNR versus cell temperature.
    TempScan(RunArgs),
    /// Numerical self-checks; exits nonzero if any fails.
    Validate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (paper-default, textbook-gamma).
    #[arg(long)]
    preset: Option<String>,
    /// Root RNG seed; overrides detection.rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one field, e.g. `--set probe.power_mw=5.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: out/<scenario>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record elapsed wall-clock time in the manifest.
    #[arg(long)]
    wall_clock: bool,
}

impl Command {
    fn split(self) -> (ScenarioKind, RunArgs) {
        match self {
            Command::DcSweep(a) => (ScenarioKind::DcSweep, a),
            Command::LockinSweep(a) => (ScenarioKind::LockinSweep, a),
            Command::SaCompare(a) => (ScenarioKind::SaCompare, a),
            Command::Sensitivity(a) => (ScenarioKind::Sensitivity, a),
            Command::TempScan(a) => (ScenarioKind::TempScan, a),
            Command::Validate(a) => (ScenarioKind::Validate, a),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::paper_default(),
    };
    for assignment in &args.overrides {
        cfg = cfg.with_override(assignment)?;
    }
    if let Some(seed) = args.seed {
        cfg.detection.rng_seed = seed;
    }
    Ok(cfg)
}

fn execute(kind: ScenarioKind, args: &RunArgs) -> Result<(), ScenarioError> {
    let started = Instant::now();
    let cfg = load_config(args)?;
    let outcome = scenario::run(kind, &cfg)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let wall = args.wall_clock.then(|| started.elapsed().as_secs_f64());
    let manifest = scenario::write_outcome(&outcome, &dir, wall)?;

    println!("scenario = {}", kind.name());
    println!("config_hash = {}", outcome.config_hash);
    for (k, v) in &outcome.summary {
        println!("{k} = {v:e}");
    }
    println!("files = {} in {}", manifest.files.len() + 1, dir.display());
    if !outcome.passed {
        let failed = outcome
            .table("validate.tsv")
            .map(|t| t.labels.iter().zip(&t.rows).filter(|(_, r)| r[0] == 0.0).map(|(l, _)| l.clone()).collect())
            .unwrap_or_default();
        return Err(ScenarioError::ValidationFailed(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
