//! Complete training state in one JSON container.

use std::fs;
use std::path::Path;

use dreal_core::data::Augmentation;
use dreal_core::layers::RunningStats;
use dreal_core::optim::Sgd;
use dreal_core::trainer::{EpochMetrics, Trainer};
use dreal_core::{build_network, Network, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io, Error, Result};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u64,
    pub config: ExperimentConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Backbone, actor and critic parameters, tagged by group.
    pub params: ParamStore<f32>,
    pub running: Vec<RunningStats<f32>>,
    pub optimizer: Sgd<f32>,
    /// Shuffling and augmentation stream, positioned after the last epoch.
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer<f32>, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            epoch: trainer.epoch,
            params: trainer.network.params.clone(),
            running: trainer.network.running.clone(),
            optimizer: trainer.optimizer.clone(),
            rng: trainer.rng.clone(),
            history: trainer.history.clone(),
        }
    }

    /// Writes through a temporary file so an interrupted save leaves the old checkpoint intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec(self).expect("checkpoint serializes");
        fs::write(&tmp, bytes).map_err(io(&tmp))?;
        fs::rename(&tmp, path).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io(path))?;
        let parse = |e: serde_json::Error| Error::Parse { path: path.to_path_buf(), message: e.to_string() };
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(parse)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "missing schema_version".into(),
        })?;
        if found != SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION });
        }
        serde_json::from_value(value).map_err(parse)
    }

    /// Network with the saved parameters and statistics, built for `config`.
    pub fn network(&self, config: &ExperimentConfig) -> Result<Network<f32>> {
        if self.config.network != config.network {
            let show = |c: &ExperimentConfig| serde_json::to_string(&c.network).expect("config serializes");
            return Err(Error::Mismatch { field: "network", found: show(&self.config), expected: show(config) });
        }
        let mut network = fresh_network(config)?;
        network.params.check_layout(&self.params)?;
        if network.running.len() != self.running.len() {
            return Err(Error::Mismatch {
                field: "running statistics",
                found: self.running.len().to_string(),
                expected: network.running.len().to_string(),
            });
        }
        network.params = self.params.clone();
        network.running = self.running.clone();
        Ok(network)
    }

    /// Trainer positioned exactly where this checkpoint was taken.
    pub fn restore(self, config: &ExperimentConfig, augmentation: Augmentation) -> Result<Trainer<f32>> {
        let network = self.network(config)?;
        let mut trainer = Trainer::new(network, config.train.clone(), config.reward.clone(), augmentation)?;
        if trainer.optimizer.num_params() != self.optimizer.num_params() {
            return Err(Error::Mismatch {
                field: "optimizer state",
                found: self.optimizer.num_params().to_string(),
                expected: trainer.optimizer.num_params().to_string(),
            });
        }
        trainer.optimizer = self.optimizer;
        trainer.rng = self.rng;
        trainer.epoch = self.epoch;
        trainer.history = self.history;
        Ok(trainer)
    }
}

/// Initial network for a run: seeded from `train.seed` on a stream distinct
/// from the trainer's shuffling stream.
pub fn fresh_network(config: &ExperimentConfig) -> Result<Network<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    rng.set_stream(1);
    Ok(build_network(&config.network, &mut rng)?)
}
