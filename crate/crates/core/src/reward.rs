//! Bypass rewards: how much the true-class probability drops when a single
//! block's attention is flattened to its per-sample mean, or a fixed
//! penalty when the full network misclassifies the sample.

use std::collections::{BTreeMap, BTreeSet};

use dreal_tensor::{Float, Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{BlockId, BlockOverride, Network, Overrides, Prediction};
use crate::error::{Error, Result};
use crate::layers::NormMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Penalty magnitude for a misclassified sample.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Added to the full-network probability before dividing.
    #[serde(default = "default_epsilon")]
    pub ratio_epsilon: f64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    1e-10
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { gamma: default_gamma(), ratio_epsilon: default_epsilon() }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("reward.gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.ratio_epsilon > 0.0 && self.ratio_epsilon <= 1e-6) {
            return Err(Error::Config(format!(
                "reward.ratio_epsilon must lie in (0, 1e-6], got {}",
                self.ratio_epsilon
            )));
        }
        Ok(())
    }
}

/// `1 - p_bypassed / (p_full + ε)` when the full network ranks the true
/// class first, `-γ` otherwise. Not clipped below.
pub fn compute_reward(p_full: f64, p_bypassed: f64, correct: bool, cfg: &RewardConfig) -> f64 {
    if correct {
        1.0 - p_bypassed / (p_full + cfg.ratio_epsilon)
    } else {
        -cfg.gamma
    }
}

/// Per-sample rewards of one bypassed block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub block: BlockId,
    pub rewards: Vec<f64>,
    /// True-class probability of the full network.
    pub p_full: Vec<f64>,
    /// True-class probability with this block's attention mean-substituted.
    pub p_bypassed: Vec<f64>,
    pub correct: Vec<bool>,
}

impl RewardRecord {
    pub fn mean(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

/// Round-robin schedule: stage `s` bypasses block `epoch mod blocks_s`,
/// for every enabled stage that has attention.
pub fn select_bypass_blocks<T: Float>(epoch: usize, network: &Network<T>, enabled: &BTreeSet<usize>) -> Vec<BlockId> {
    let present: BTreeSet<BlockId> = network.attention_blocks().into_iter().collect();
    enabled
        .iter()
        .filter(|&&s| s < network.num_stages())
        .map(|&s| BlockId::new(s, epoch % network.blocks_in_stage(s)))
        .filter(|id| present.contains(id))
        .collect()
}

/// Where bypass passes start.
#[derive(Clone, Copy, Debug)]
pub enum BypassSource<'a, T> {
    /// Full passes from the input images.
    Images(&'a Tensor<T>),
    /// Activations entering each block, taken from a full pass on the same
    /// batch; each bypass pass resumes at the bypassed block.
    BlockInputs(&'a BTreeMap<BlockId, Tensor<T>>),
}

/// One forward pass per listed block, with only that block's attention
/// replaced by its per-sample mean. Runs on a gradient-free graph and leaves
/// all network state (parameters, running statistics) untouched.
pub fn bypass_forward<T: Float>(
    network: &Network<T>,
    source: BypassSource<'_, T>,
    blocks: &[BlockId],
    norm: NormMode,
) -> Result<BTreeMap<BlockId, Prediction<T>>> {
    if let Some(id) = blocks.iter().find(|id| !network.has_block(**id)) {
        return Err(Error::UnknownBlock(*id));
    }
    blocks
        .iter()
        .map(|&id| {
            let overrides: Overrides<T> = [(id, BlockOverride::MeanSubstitute)].into_iter().collect();
            let prediction = match source {
                BypassSource::Images(images) => network.predict(images, norm, &overrides)?.0,
                BypassSource::BlockInputs(inputs) => {
                    let x = inputs.get(&id).ok_or(Error::UnknownBlock(id))?;
                    let graph = Graph::inference();
                    let bound = network.params.bind(&graph);
                    network.forward_from(&graph, &bound, id, x, norm, &overrides)?.prediction()?
                }
            };
            Ok((id, prediction))
        })
        .collect()
}

/// Rewards for each listed block given the full-network prediction.
pub fn compute_rewards<T: Float>(
    network: &Network<T>,
    source: BypassSource<'_, T>,
    labels: &[usize],
    full: &Prediction<T>,
    blocks: &[BlockId],
    norm: NormMode,
    cfg: &RewardConfig,
) -> Result<Vec<RewardRecord>> {
    let correct = full.correct(labels);
    let p_full: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| full.prob(i, l).to_f64()).collect();
    let bypassed = bypass_forward(network, source, blocks, norm)?;
    Ok(bypassed
        .into_iter()
        .map(|(block, pred)| {
            let p_bypassed: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| pred.prob(i, l).to_f64()).collect();
            let rewards = p_full
                .iter()
                .zip(&p_bypassed)
                .zip(&correct)
                .map(|((&pf, &pb), &ok)| compute_reward(pf, pb, ok, cfg))
                .collect();
            RewardRecord { block, rewards, p_full: p_full.clone(), p_bypassed, correct: correct.clone() }
        })
        .collect())
}
