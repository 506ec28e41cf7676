//! Experiment configuration: one TOML file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use dreal_core::backbone::NetworkConfig;
use dreal_core::reward::RewardConfig;
use dreal_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dataset::DatasetConfig;
use crate::error::{io, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub plots: PlotConfig,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            dataset: DatasetConfig::default(),
            output_dir: default_output_dir(),
            plots: PlotConfig::default(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    /// Attention distribution plots from the final snapshot.
    #[serde(default = "yes")]
    pub attention: bool,
    /// Per-block Q and R curves over epochs.
    #[serde(default = "yes")]
    pub critic: bool,
}

fn yes() -> bool {
    true
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { attention: true, critic: true }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate(self.network.stages.len())?;
        self.reward.validate()?;
        self.dataset.validate(&self.network)?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        Self::parse(text, overrides, Path::new("<inline>"))
    }

    fn parse(text: &str, overrides: &[String], origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse { path: origin.to_path_buf(), message };
        let mut table: Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        fill_stages(&mut table).map_err(|e| parse_err(e.to_string()))?;
        // Round-trip through text so that errors carry the offending key.
        let text = toml::to_string(&table).map_err(|e| parse_err(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    ExperimentConfig::parse(&text, overrides, path)
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = toml::from_str::<Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Derives `network.stages` from `network.input_shape` and the harness-only
/// `network.blocks_per_stage` (default 3) when no stages are listed.
fn fill_stages(table: &mut Table) -> std::result::Result<(), toml::de::Error> {
    let network = table.entry("network").or_insert_with(|| Value::Table(Table::new()));
    let Some(network) = network.as_table_mut() else {
        return Ok(());
    };
    if network.contains_key("stages") {
        // a stray blocks_per_stage is left in place and rejected as unknown
        return Ok(());
    }
    let blocks: usize = match network.remove("blocks_per_stage") {
        Some(v) => v.try_into()?,
        None => 3,
    };
    let input: [usize; 3] = match network.get("input_shape") {
        Some(v) => v.clone().try_into()?,
        None => NetworkConfig::default().input_shape,
    };
    let stages = NetworkConfig::desk_stages(blocks, input);
    network.insert("stages".into(), Value::try_from(stages).expect("stage specs serialize"));
    Ok(())
}
