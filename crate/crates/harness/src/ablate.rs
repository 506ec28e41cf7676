//! Per-block bypass rewards of a trained network in inference mode.

use std::collections::{BTreeMap, BTreeSet};

use dreal_core::data::LabeledImages;
use dreal_core::layers::NormMode;
use dreal_core::reward::{compute_rewards, BypassSource, RewardConfig};
use dreal_core::{BlockId, Network, Overrides};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub block: BlockId,
    pub samples: usize,
    /// Samples the full network classifies correctly.
    pub correct: usize,
    pub mean_reward: f64,
    /// Mean reward over correctly classified samples only.
    pub mean_reward_correct: Option<f64>,
    pub max_abs_reward_correct: f64,
    pub mean_p_full: f64,
    pub mean_p_bypassed: f64,
}

#[derive(Default)]
struct Acc {
    samples: usize,
    correct: usize,
    reward: f64,
    reward_correct: f64,
    max_abs_correct: f64,
    p_full: f64,
    p_bypassed: f64,
}

/// One row per attention block of `stages`, in forward order.
pub fn ablate(
    network: &Network<f32>,
    data: &LabeledImages<f32>,
    stages: &BTreeSet<usize>,
    reward: &RewardConfig,
    batch_size: usize,
) -> Result<Vec<AblationRow>> {
    let blocks = network.blocks_in(stages);
    let mut acc: BTreeMap<BlockId, Acc> = blocks.iter().map(|b| (*b, Acc::default())).collect();
    for batch in data.sequential_batches(batch_size.max(1)) {
        let (full, _) = network.predict(&batch.images, NormMode::Running, &Overrides::new())?;
        let records = compute_rewards(
            network,
            BypassSource::Images(&batch.images),
            &batch.labels,
            &full,
            &blocks,
            NormMode::Running,
            reward,
        )?;
        for rec in records {
            let a = acc.get_mut(&rec.block).expect("requested block");
            for i in 0..rec.rewards.len() {
                a.samples += 1;
                a.reward += rec.rewards[i];
                a.p_full += rec.p_full[i];
                a.p_bypassed += rec.p_bypassed[i];
                if rec.correct[i] {
                    a.correct += 1;
                    a.reward_correct += rec.rewards[i];
                    a.max_abs_correct = a.max_abs_correct.max(rec.rewards[i].abs());
                }
            }
        }
    }
    Ok(blocks
        .iter()
        .map(|b| {
            let a = &acc[b];
            let n = a.samples.max(1) as f64;
            AblationRow {
                block: *b,
                samples: a.samples,
                correct: a.correct,
                mean_reward: a.reward / n,
                mean_reward_correct: (a.correct > 0).then(|| a.reward_correct / a.correct as f64),
                max_abs_reward_correct: a.max_abs_correct,
                mean_p_full: a.p_full / n,
                mean_p_bypassed: a.p_bypassed / n,
            }
        })
        .collect())
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>8} {:>12} {:>14} {:>10} {:>10}\n",
        "block", "samples", "correct", "mean_R", "mean_R_correct", "p_full", "p_bypass"
    );
    for r in rows {
        let rc = r.mean_reward_correct.map_or("-".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{:<8} {:>8} {:>8} {:>12.6} {:>14} {:>10.4} {:>10.4}\n",
            r.block.to_string(),
            r.samples,
            r.correct,
            r.mean_reward,
            rc,
            r.mean_p_full,
            r.mean_p_bypassed
        ));
    }
    out
}
