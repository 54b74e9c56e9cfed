use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spinquad_core::multipoles::{DEFAULT_HUSIMI_PHI, DEFAULT_HUSIMI_THETA};
use spinquad_core::{CenterParams, DriveParams, RateParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// `steps` evenly spaced points from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps).map(|k| if k + 1 == self.steps { self.max } else { self.min + h * k as f64 }).collect()
    }

    fn check(&self, name: &str) -> Result<(), String> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(format!("{name}: bounds must be finite"));
        }
        if self.steps == 0 {
            return Err(format!("{name}.steps must be >= 1"));
        }
        if self.min > self.max {
            return Err(format!("{name}: min ({}) exceeds max ({})", self.min, self.max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// mT.
    pub field: Grid,
    /// MHz.
    pub freq: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Static field of the `spectrum` subcommand, mT.
    pub field: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HusimiConfig {
    pub n_theta: usize,
    pub n_phi: usize,
    /// mT.
    pub field: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` and then `SPINQUAD_OUT` take over when null.
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub center: CenterParams,
    pub rates: RateParams,
    pub drive: DriveParams,
    pub sweep: SweepConfig,
    pub spectrum: SpectrumConfig,
    pub husimi: HusimiConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            center: CenterParams::default(),
            rates: RateParams::default(),
            drive: DriveParams::default(),
            sweep: SweepConfig { field: Grid { min: 0.0, max: 15.0, steps: 61 }, freq: Grid { min: 10.0, max: 600.0, steps: 2361 } },
            spectrum: SpectrumConfig { field: 0.0 },
            husimi: HusimiConfig { n_theta: DEFAULT_HUSIMI_THETA, n_phi: DEFAULT_HUSIMI_PHI, field: 0.0 },
            output: OutputConfig { dir: None, format: Format::Csv },
        }
    }
}

/// Name accepted by `--config` for the built-in defaults.
pub const BUILTIN: &str = "default";

pub fn default_json() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("default config serializes") + "\n"
}

fn read_tree(source: Option<&str>) -> Result<(Value, String), CliError> {
    match source {
        None | Some(BUILTIN) => Ok((serde_json::to_value(RunConfig::default()).expect("default config serializes"), BUILTIN.into())),
        Some(path) => {
            let text = std::fs::read_to_string(Path::new(path)).map_err(|e| CliError::Config(format!("cannot read config {path}: {e}")))?;
            let tree = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            Ok((tree, path.into()))
        }
    }
}

/// Applies `a.b.c=value`. The path must already exist; `value` is parsed as
/// JSON and falls back to a plain string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let mut node = &mut *tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            _ => None,
        }
        .ok_or_else(|| CliError::Config(format!("--set: unknown key {key:?}")))?;
    }
    *node = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Loads, overrides and validates the run configuration.
pub fn load(source: Option<&str>, overrides: &[String]) -> Result<(RunConfig, String), CliError> {
    let (mut tree, origin) = read_tree(source)?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let config: RunConfig = serde_json::from_value(tree).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    config.check().map_err(CliError::Config)?;
    Ok((config, origin))
}

impl RunConfig {
    /// Hard violations only; see [`RunConfig::warnings`] for soft ones.
    pub fn check(&self) -> Result<(), String> {
        self.center.validate().map_err(|e| format!("center: {e}"))?;
        self.rates.validate().map_err(|e| format!("rates: {e}"))?;
        self.drive.validate().map_err(|e| format!("drive: {e}"))?;
        self.sweep.field.check("sweep.field")?;
        self.sweep.freq.check("sweep.freq")?;
        for (name, v) in [("spectrum.field", self.spectrum.field), ("husimi.field", self.husimi.field)] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        if self.husimi.n_theta == 0 || self.husimi.n_phi == 0 {
            return Err("husimi grid sizes must be >= 1".into());
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        self.rates.hierarchy_warnings()
    }
}
