use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use stokes_ctm::expcli::{self, ErrorRecord, ExperimentConfig, Overrides, Subcommand};
use stokes_ctm::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Compute the Stokes eigendecomposition and persist it.
    Modes,
    /// Hyperbolic HUM null controls on random data.
    WaveControl,
    /// Penalized-HUM controls of the Stokes and 1D heat systems.
    DirectControl,
    /// Controlled fundamental solutions and their norm scaling.
    BuildKernel,
    /// Transmuted Stokes controls and the rough-data pipeline.
    Transmute,
    /// Cost of control against T for every method, with model fits.
    CostSweep,
    /// Observability constants, identity residuals and control time.
    Observability,
    /// Refit a cost curve CSV.
    Report,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Modes => Subcommand::Modes,
            Command::WaveControl => Subcommand::WaveControl,
            Command::DirectControl => Subcommand::DirectControl,
            Command::BuildKernel => Subcommand::BuildKernel,
            Command::Transmute => Subcommand::Transmute,
            Command::CostSweep => Subcommand::CostSweep,
            Command::Observability => Subcommand::Observability,
            Command::Report => Subcommand::Report,
        }
    }
}

/// Null controls for the 2D Stokes system by control transmutation.
#[derive(Debug, Parser)]
#[command(name = "stokes-ctm", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Run a single parabolic horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Kernel half-length.
    #[arg(long = "L")]
    half_length: Option<f64>,
    /// Number of controlled modes.
    #[arg(long)]
    modes: Option<usize>,
    /// Cost curve read by `report`.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn execute(cli: &Cli) -> Result<Vec<String>, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        horizon: cli.horizon,
        half_length: cli.half_length,
        modes: cli.modes,
    })?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let summary = expcli::run(cli.command.into(), &cfg, cli.input.as_deref())?;
    let mut lines = summary.lines;
    lines.extend(summary.outputs.iter().map(|p| format!("wrote {}", p.display())));
    Ok(lines)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = ErrorRecord::from(&e);
            let json = serde_json::to_string(&record).expect("error record serializes");
            eprintln!("{json}");
            if let Some(out) = &cli.out {
                let _ = std::fs::create_dir_all(out);
                let _ = std::fs::write(out.join("error.json"), &json);
            }
            ExitCode::from(record.exit_code as u8)
        }
    }
}
