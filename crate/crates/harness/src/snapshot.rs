//! Per-element distribution of attention actions over an evaluation set.

use std::collections::BTreeSet;

use dreal_core::actors::ActionKind;
use dreal_core::data::LabeledImages;
use dreal_core::layers::NormMode;
use dreal_core::{BlockId, Network, Overrides};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub block: BlockId,
    pub kind: ActionKind,
    /// Per-sample action shape: `[C]` for channel maps, `[H, W]` for spatial ones.
    pub shape: Vec<usize>,
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Population variance.
    pub variance: Vec<f64>,
}

/// Streaming mean and variance (Welford).
#[derive(Clone, Debug, Default)]
pub struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn push(&mut self, x: &[f64]) {
        if self.count == 0 {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|m2| (m2 / n).max(0.0)).collect()
    }
}

/// Snapshots for every attention block in `stages`, computed with running
/// normalization statistics in batches of `batch_size`.
pub fn snapshot_attention(
    network: &Network<f32>,
    eval: &LabeledImages<f32>,
    stages: &BTreeSet<usize>,
    batch_size: usize,
) -> Result<Vec<AttentionSnapshot>> {
    let blocks = network.blocks_in(stages);
    let mut acc: Vec<(BlockId, ActionKind, Vec<usize>, Moments)> = Vec::new();
    for batch in eval.sequential_batches(batch_size.max(1)) {
        let (_, traces) = network.predict(&batch.images, NormMode::Running, &Overrides::new())?;
        for trace in traces.iter().filter(|t| blocks.contains(&t.id)) {
            for action in &trace.native {
                let idx = match acc.iter().position(|(b, k, _, _)| *b == trace.id && *k == action.kind) {
                    Some(i) => i,
                    None => {
                        acc.push((trace.id, action.kind, action.values.shape()[1..].to_vec(), Moments::default()));
                        acc.len() - 1
                    }
                };
                let per = action.values.numel() / action.batch().max(1);
                for sample in action.values.data().chunks(per.max(1)) {
                    let row: Vec<f64> = sample.iter().map(|&v| v as f64).collect();
                    acc[idx].3.push(&row);
                }
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(block, kind, shape, m)| AttentionSnapshot {
            block,
            kind,
            shape,
            samples: m.count(),
            mean: m.mean().to_vec(),
            variance: m.variance(),
        })
        .collect())
}
