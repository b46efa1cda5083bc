//! Run configuration: defaults, then a TOML file, then `CORRTOMO_*`
//! environment variables, then command-line flags.

use std::path::Path;

use corrtomo::bench::SweepConfig;
use corrtomo::histogram::IngestOptions;
use corrtomo::sampling::SourceFitConfig;
use corrtomo::tomography::{MeasurementMode, OptimizerConfig};
use serde::Deserialize;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "CORRTOMO_";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; flags override it, and it overrides per-section seeds.
    pub seed: Option<u64>,
    pub simulate: SimulateConfig,
    pub optimizer: OptimizerConfig,
    pub benchmark: SweepConfig,
    pub ingest: IngestOptions,
    pub fit: SourceFitConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dim: usize,
    pub mode: MeasurementMode,
    pub sigma: f64,
    pub loss_low: f64,
    pub loss_high: f64,
    pub indistinguishability: f64,
    /// Pump period for synthetic histograms, seconds.
    pub pump_period: f64,
    /// Mean side-peak area of synthetic histograms, counts.
    pub side_counts: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            mode: MeasurementMode::Full,
            sigma: 0.0,
            loss_low: 0.5,
            loss_high: 1.0,
            indistinguishability: 0.9,
            pump_period: 12.5e-9,
            side_counts: 2e4,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

/// Parse an environment value as a TOML literal, falling back to a string.
fn env_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// `CORRTOMO_OPTIMIZER__N_STARTS=8` sets `optimizer.n_starts`.
fn apply_env(table: &mut Table, vars: impl Iterator<Item = (String, String)>) -> Result<(), ConfigError> {
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let parts: Vec<String> = path.split("__").map(|p| p.to_ascii_lowercase()).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError(format!("malformed override variable {key}")));
        }
        let mut node = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError(format!("{key}: '{p}' is not a section")))?;
        }
        node.insert(parts[parts.len() - 1].clone(), env_value(&raw));
    }
    Ok(())
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    load_with_env(path, std::env::vars())
}

pub fn load_with_env(
    path: Option<&Path>,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            toml::from_str::<Table>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    apply_env(&mut table, vars)?;
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(e.to_string()))
}
