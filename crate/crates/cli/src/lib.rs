//! Command-line front end: loads a run configuration, evaluates one of the
//! model computations and writes CSV/JSON tables plus `manifest.json`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use spinquad_core::Calibration;

pub mod commands;
pub mod config;
pub mod output;

pub use config::{Format, RunConfig};

/// Output directory used when neither `--out`, the config nor
/// `SPINQUAD_OUT` names one.
pub const DEFAULT_OUT_DIR: &str = "spinquad-out";
pub const OUT_ENV: &str = "SPINQUAD_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure in {context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: spinquad_core::Error,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }

    /// Wraps a core error raised while running `context`. Parameter errors
    /// count as configuration errors.
    pub fn from_core(context: impl Into<String>, source: spinquad_core::Error) -> Self {
        use spinquad_core::Error as E;
        let context = context.into();
        match source {
            E::InvalidParameter(_) | E::InvalidRates(_) => CliError::Config(format!("{context}: {source}")),
            _ => CliError::Numerical { context, source },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spinquad", version, about = "Spin-3/2 defect ODMR simulator")]
pub struct Cli {
    /// Config file, or `default` for the built-in parameter set.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<String>,

    /// Override one config entry, e.g. `--set rates.eta_e=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Energies, populations and transitions against field.
    Levels,
    /// ODMR spectrum at `spectrum.field`.
    Spectrum,
    /// ODMR map over the field and frequency grids.
    Map,
    /// Husimi maps of the steady state at `husimi.field`.
    Husimi,
    /// Quadrupole and dipole moments against field.
    Multipoles,
    /// Closed-form rate model checks (always JSON).
    Ratecheck,
    /// Population variations and multipoles from measured peak areas.
    Extract {
        /// JSON file with `field_mT`, `gs` and `es` area maps.
        #[arg(long, value_name = "PATH")]
        areas: PathBuf,
        #[arg(long, value_enum, default_value_t = CalibrationArg::Uncalibrated)]
        calibration: CalibrationArg,
    },
    /// Check a configuration and print the resolved parameters.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CalibrationArg {
    Uncalibrated,
    Calibrated,
}

impl From<CalibrationArg> for Calibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Uncalibrated => Calibration::Uncalibrated,
            CalibrationArg::Calibrated => Calibration::Calibrated,
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Levels => "levels",
            Command::Spectrum => "spectrum",
            Command::Map => "map",
            Command::Husimi => "husimi",
            Command::Multipoles => "multipoles",
            Command::Ratecheck => "ratecheck",
            Command::Extract { .. } => "extract",
            Command::Validate => "validate",
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub out_dir: Option<PathBuf>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Text for stdout (`validate`).
    pub report: Option<String>,
}

/// `--out`, then `output.dir`, then `SPINQUAD_OUT`, then [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(cli_out: Option<&PathBuf>, config: &RunConfig, env: Option<String>) -> PathBuf {
    cli_out
        .cloned()
        .or_else(|| config.output.dir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let (mut config, origin) = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(f) = cli.format {
        config.output.format = f;
    }
    if let Command::Validate = cli.command {
        return Ok(commands::validate(&config, &origin));
    }
    let out_dir = resolve_out_dir(cli.out.as_ref(), &config, std::env::var(OUT_ENV).ok());
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build().map_err(|e| CliError::Config(format!("--jobs {}: {e}", cli.jobs)))?;
    pool.install(|| commands::execute(&cli.command, &config, &origin, &out_dir, cli.jobs))
}
