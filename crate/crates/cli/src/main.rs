use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_area_coupling::harness::{run_experiment, write_report, ExperimentConfig, ExperimentKind, RunOptions};
use levy_area_coupling::CouplingError;

/// Exit status for invalid configuration or input.
const EXIT_INVALID: u8 = 1;
/// Exit status when some replica aborted; outputs are still written.
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser)]
#[command(
    name = "levy-couple",
    version,
    about = "Monte Carlo experiments for co-adapted couplings of Brownian motion with stochastic areas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full coupled SDE in n dimensions until coupling.
    SimulateFull(Common),
    /// Scaled coupling-time distribution from the reduced log-scale system.
    SimulateReduced(Common),
    /// Monte Carlo exponential functionals against their Inverse Gamma law.
    DufresneCheck(Common),
    /// One-step drift and quadratic-variation check of the distance system.
    ItoValidate(Common),
    /// Alternating reflection/synchronous coupling of the Kolmogorov diffusion.
    Kolmogorov(Common),
    /// Print every setting with its default (or the effective value).
    Describe(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Records file; `-` writes to standard output.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Override any configuration key, e.g. `--set alpha_sq=1.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build_config(kind: Option<ExperimentKind>, common: &Common) -> Result<ExperimentConfig, CouplingError> {
    let mut config = ExperimentConfig::default();
    if let Some(kind) = kind {
        config.experiment = kind;
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| CouplingError::Io(format!("{}: {e}", path.display())))?;
        config.apply_text(&text)?;
        if let Some(kind) = kind {
            if config.experiment != kind {
                return Err(CouplingError::Config {
                    field: "experiment".into(),
                    message: format!("config file says {} but the subcommand runs {kind}", config.experiment),
                });
            }
        }
    }
    for pair in &common.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| CouplingError::Config {
            field: pair.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        let key = key.trim();
        if key == "experiment" && kind.is_some() {
            return Err(CouplingError::Config {
                field: "experiment".into(),
                message: "chosen by the subcommand".into(),
            });
        }
        config.set(key, value.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(replicas) = common.replicas {
        config.replicas = replicas;
    }
    if let Some(out) = &common.out {
        config.output_path = out.clone();
    }
    if let Some(format) = &common.format {
        config.set("format", format)?;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command) -> Result<u8, CouplingError> {
    let (kind, common) = match command {
        Command::SimulateFull(c) => (Some(ExperimentKind::FullCoupling), c),
        Command::SimulateReduced(c) => (Some(ExperimentKind::ReducedCouplingDist), c),
        Command::DufresneCheck(c) => (Some(ExperimentKind::DufresneCheck), c),
        Command::ItoValidate(c) => (Some(ExperimentKind::ItoValidate), c),
        Command::Kolmogorov(c) => (Some(ExperimentKind::Kolmogorov), c),
        Command::Describe(c) => (None, c),
    };
    let config = build_config(kind, &common)?;
    if kind.is_none() {
        print!("{}", config.describe());
        return Ok(0);
    }
    let report = run_experiment(
        &config,
        RunOptions {
            workers: common.workers,
        },
    )?;
    if config.output_path == "-" {
        match config.format {
            levy_area_coupling::harness::OutputFormat::Csv => {
                print!("{}", report.csv());
                eprintln!("{}", report.summary_json());
            }
            levy_area_coupling::harness::OutputFormat::Json => println!("{}", report.full_json()),
        }
    } else {
        for path in write_report(&report)? {
            eprintln!("wrote {}", path.display());
        }
    }
    if report.has_failures() {
        for note in &report.failures {
            eprintln!("replica {} {}: {}", note.replica_id, note.status.as_str(), note.message);
        }
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
