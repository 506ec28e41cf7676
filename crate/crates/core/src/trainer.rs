//! Alternating optimization of backbone, actors and critics.
//!
//! Each step runs one tracked forward pass, the bypass passes of the
//! epoch's scheduled blocks, and up to three backward sweeps:
//!
//! * backbone weights follow the classification loss alone,
//! * actors follow classification loss plus `λ_q` times the negated Q-values,
//! * critics follow `λ_r` times the Q/reward regression loss.

use std::collections::{BTreeMap, BTreeSet};

use dreal_tensor::{Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BlockId, ForwardPass, Network, Overrides};
use crate::data::{shuffled_batches, Augmentation, Batch, LabeledImages};
use crate::error::{Error, Result};
use crate::layers::NormMode;
use crate::optim::{LrSchedule, Sgd};
use crate::params::{Bound, ParamGroup, ParamId};
use crate::reward::{compute_rewards, select_bypass_blocks, BypassSource, RewardConfig, RewardRecord};
use dreal_tensor::BatchStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Actor/critic training with bypass rewards.
    #[default]
    Reinforced,
    /// Plain supervised training of the attention network; critics unused.
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub learning_rate: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Applied to backbone and actor parameters.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub critic_weight_decay: f64,
    #[serde(default = "default_lambda")]
    pub lambda_q: f64,
    #[serde(default = "default_lambda")]
    pub lambda_r: f64,
    /// Stages whose blocks get critics and rewards; all stages when absent.
    #[serde(default)]
    pub enabled_stages: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
}

fn default_epochs() -> usize {
    60
}

fn default_batch() -> usize {
    64
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: LrSchedule::default(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            critic_weight_decay: 0.0,
            lambda_q: default_lambda(),
            lambda_r: default_lambda(),
            enabled_stages: None,
            seed: 0,
            method: Method::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_stages: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        for (name, v) in [("lambda_q", self.lambda_q), ("lambda_r", self.lambda_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("train.{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("critic_weight_decay", self.critic_weight_decay),
            ("learning_rate.initial", self.learning_rate.initial),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("train.{name} must be finite and >= 0, got {v}"));
            }
        }
        if let Some(stages) = &self.enabled_stages {
            if stages.is_empty() {
                return bad("train.enabled_stages must not be empty".into());
            }
            if let Some(s) = stages.iter().find(|&&s| s >= num_stages) {
                return bad(format!("train.enabled_stages contains {s}, but the network has {num_stages} stages"));
            }
        }
        Ok(())
    }

    pub fn stages(&self, num_stages: usize) -> BTreeSet<usize> {
        match &self.enabled_stages {
            Some(s) => s.iter().copied().filter(|&s| s < num_stages).collect(),
            None => (0..num_stages).collect(),
        }
    }
}

/// Mean cross-entropy of the labelled classes.
pub fn classification_loss<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
    Ok(logits.cross_entropy(labels)?)
}

/// Mean of `-Q` over samples and all given Q-values (each `[N, 1]`).
pub fn quality_loss<'g, T: Float>(q_values: &[Var<'g, T>]) -> Option<Var<'g, T>> {
    mean_over(q_values.iter().map(|q| q.neg().sum_all()), q_values)
}

/// Mean of `(Q - R)^2` over samples and all given (Q, reward) pairs.
pub fn regression_loss<'g, T: Float>(pairs: &[(Var<'g, T>, &[f64])]) -> Result<Option<Var<'g, T>>> {
    let mut terms = Vec::with_capacity(pairs.len());
    for (q, rewards) in pairs {
        let n = q.shape()[0];
        if rewards.len() != n {
            return Err(Error::Config(format!("{} rewards for {n} Q-values", rewards.len())));
        }
        let r = q.graph().constant(Tensor::from_vec([n, 1], rewards.iter().map(|&v| T::of(v)).collect())?);
        terms.push(q.sub(r)?.sqr().sum_all());
    }
    let qs: Vec<_> = pairs.iter().map(|(q, _)| *q).collect();
    Ok(mean_over(terms.into_iter(), &qs))
}

fn mean_over<'g, T: Float>(sums: impl Iterator<Item = Var<'g, T>>, qs: &[Var<'g, T>]) -> Option<Var<'g, T>> {
    let count: usize = qs.iter().map(|q| q.shape()[0]).sum();
    let total = sums.reduce(|a, b| a.add(b).expect("scalars"))?;
    Some(total.scale(T::one() / T::of(count.max(1) as f64)))
}

/// All losses of one step on a given graph.
pub struct Objectives<'g, T: Float> {
    pub pass: ForwardPass<'g, T>,
    pub l_c: Var<'g, T>,
    pub l_q: Option<Var<'g, T>>,
    pub l_r: Option<Var<'g, T>>,
    /// Per enabled block, one `[N, 1]` Q-value per critic of its stage.
    pub q_values: BTreeMap<BlockId, Vec<Var<'g, T>>>,
    pub rewards: Vec<RewardRecord>,
}

/// Builds the forward pass and the three losses with fixed regression
/// targets for the blocks in `rewards`; blocks in `stages` get Q-values.
pub fn objectives<'g, T: Float>(
    network: &Network<T>,
    graph: &'g Graph<T>,
    bound: &Bound<'g, T>,
    batch: &Batch<T>,
    stages: &BTreeSet<usize>,
    rewards: &[RewardRecord],
) -> Result<Objectives<'g, T>> {
    objectives_with(network, graph, bound, batch, stages, |_| Ok(rewards.to_vec()))
}

/// As [`objectives`], with rewards derived from the tracked forward pass.
pub fn objectives_with<'g, T: Float>(
    network: &Network<T>,
    graph: &'g Graph<T>,
    bound: &Bound<'g, T>,
    batch: &Batch<T>,
    stages: &BTreeSet<usize>,
    rewards_for: impl FnOnce(&ForwardPass<'g, T>) -> Result<Vec<RewardRecord>>,
) -> Result<Objectives<'g, T>> {
    let pass = network.forward(graph, bound, &batch.images, NormMode::Batch, &Overrides::new())?;
    let l_c = classification_loss(pass.logits, &batch.labels)?;
    let rewards = rewards_for(&pass)?;
    let stage_list: Vec<usize> = stages.iter().copied().collect();
    let q_values = network.critic_values(bound, &pass.traces, &stage_list)?;
    let all_q: Vec<_> = q_values.values().flatten().copied().collect();
    let l_q = quality_loss(&all_q);
    let mut pairs = Vec::new();
    for record in &rewards {
        let qs = q_values.get(&record.block).ok_or(Error::UnknownBlock(record.block))?;
        pairs.extend(qs.iter().map(|&q| (q, record.rewards.as_slice())));
    }
    let l_r = regression_loss(&pairs)?;
    Ok(Objectives { pass, l_c, l_q, l_r, q_values, rewards })
}

/// Losses and diagnostics of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_c: f64,
    pub l_q: f64,
    pub l_r: f64,
    /// Batch-mean Q per enabled block (averaged over the stage's critics).
    pub q_values: BTreeMap<BlockId, f64>,
    pub rewards: Vec<RewardRecord>,
    /// Mean `|Q - R|` over bypassed blocks, their critics and samples.
    pub qr_gap: Option<f64>,
    pub correct: usize,
    pub batch_size: usize,
}

/// Gradients of one step, partitioned by parameter group.
pub struct StepGradients<T> {
    pub backbone: Vec<(ParamId, Tensor<T>)>,
    pub actor: Vec<(ParamId, Tensor<T>)>,
    pub critic: Vec<(ParamId, Tensor<T>)>,
    pub bundle: LossBundle,
    observed: Vec<(usize, BatchStats<T>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub block: BlockId,
    pub mean_q: Option<f64>,
    /// Only present in epochs where the block was bypassed.
    pub mean_r: Option<f64>,
}

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub l_c: f64,
    pub l_q: f64,
    pub l_r: f64,
    pub blocks: Vec<BlockMetrics>,
    pub qr_gap: Option<f64>,
}

/// Network plus optimizer, RNG and history: everything needed to resume.
pub struct Trainer<T: Float> {
    pub network: Network<T>,
    pub config: TrainConfig,
    pub reward: RewardConfig,
    pub augmentation: Augmentation,
    pub optimizer: Sgd<T>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

fn check_finite(loss: &'static str, value: f64, block: Option<BlockId>) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { loss, block })
    }
}

impl<T: Float> Trainer<T> {
    pub fn new(network: Network<T>, config: TrainConfig, reward: RewardConfig, augmentation: Augmentation) -> Result<Self> {
        config.validate(network.num_stages())?;
        reward.validate()?;
        let optimizer = Sgd::new(network.params.len(), config.momentum);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { network, config, reward, augmentation, optimizer, rng, epoch: 0, history: Vec::new() })
    }

    pub fn enabled_stages(&self) -> BTreeSet<usize> {
        self.config.stages(self.network.num_stages())
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate.rate(self.epoch)
    }

    /// Computes the partitioned gradients of one step without applying them.
    pub fn gradients(&self, batch: &Batch<T>) -> Result<StepGradients<T>> {
        let net = &self.network;
        let graph = Graph::new();
        let bound = net.params.bind(&graph);
        let group_vars = |g: ParamGroup| -> Vec<(ParamId, Var<'_, T>)> {
            net.params.ids_in(g).map(|id| (id, bound[id])).collect()
        };
        let (bb, act, crit) = (group_vars(ParamGroup::Backbone), group_vars(ParamGroup::Actor), group_vars(ParamGroup::Critic));
        let collect = |grads: &dreal_tensor::Gradients<T>, vars: &[(ParamId, Var<'_, T>)]| {
            vars.iter().map(|(id, v)| (*id, grads.get_or_zeros(v))).collect::<Vec<_>>()
        };
        let n = batch.labels.len();

        if self.config.method == Method::Supervised || net.attention_blocks().is_empty() {
            let pass = net.forward(&graph, &bound, &batch.images, NormMode::Batch, &Overrides::new())?;
            let l_c = classification_loss(pass.logits, &batch.labels)?;
            check_finite("l_c", l_c.value().item().to_f64(), None)?;
            let wrt: Vec<_> = bb.iter().chain(&act).map(|(_, v)| *v).collect();
            let g_c = graph.backward(l_c, &wrt)?;
            let correct = pass.prediction()?.correct(&batch.labels).iter().filter(|&&c| c).count();
            let bundle = LossBundle {
                l_c: l_c.value().item().to_f64(),
                l_q: 0.0,
                l_r: 0.0,
                q_values: BTreeMap::new(),
                rewards: Vec::new(),
                qr_gap: None,
                correct,
                batch_size: n,
            };
            return Ok(StepGradients {
                backbone: collect(&g_c, &bb),
                actor: collect(&g_c, &act),
                critic: Vec::new(),
                bundle,
                observed: pass.observed,
            });
        }

        let stages = self.enabled_stages();
        let scheduled = select_bypass_blocks(self.epoch, net, &stages);
        let reward_cfg = &self.reward;
        let mut full = None;
        let obj = objectives_with(net, &graph, &bound, batch, &stages, |pass| {
            let prediction = pass.prediction()?;
            let inputs: BTreeMap<BlockId, Tensor<T>> = pass
                .block_inputs
                .iter()
                .filter(|(id, _)| scheduled.contains(id))
                .map(|(id, x)| (*id, x.value().as_ref().clone()))
                .collect();
            let source = BypassSource::BlockInputs(&inputs);
            let rewards =
                compute_rewards(net, source, &batch.labels, &prediction, &scheduled, NormMode::Batch, reward_cfg)?;
            full = Some(prediction);
            Ok(rewards)
        })?;
        let full = full.expect("set by the reward closure");
        let rewards = obj.rewards.clone();

        let value = |v: &Var<'_, T>| v.value().item().to_f64();
        let l_c = value(&obj.l_c);
        check_finite("l_c", l_c, None)?;
        let mut q_means = BTreeMap::new();
        for (id, qs) in &obj.q_values {
            let mean = qs.iter().map(|q| q.value().mean().to_f64()).sum::<f64>() / qs.len() as f64;
            check_finite("q_value", mean, Some(*id))?;
            q_means.insert(*id, mean);
        }
        let l_q = obj.l_q.as_ref().map(value).unwrap_or(0.0);
        let l_r = obj.l_r.as_ref().map(value).unwrap_or(0.0);
        check_finite("l_q", l_q, None)?;
        check_finite("l_r", l_r, None)?;
        for r in &rewards {
            if let Some(bad) = r.rewards.iter().find(|v| !v.is_finite()) {
                let _ = bad;
                return Err(Error::NonFinite { loss: "reward", block: Some(r.block) });
            }
        }

        let mut gap_sum = 0.0;
        let mut gap_count = 0usize;
        for r in &rewards {
            for q in &obj.q_values[&r.block] {
                for (qv, rv) in q.value().data().iter().zip(&r.rewards) {
                    gap_sum += (Float::to_f64(*qv) - rv).abs();
                    gap_count += 1;
                }
            }
        }

        let wrt_c: Vec<_> = bb.iter().chain(&act).map(|(_, v)| *v).collect();
        let g_c = graph.backward(obj.l_c, &wrt_c)?;
        let mut actor = collect(&g_c, &act);
        if let (Some(l_q_var), true) = (obj.l_q, self.config.lambda_q > 0.0) {
            let theta: Vec<_> = act.iter().map(|(_, v)| *v).collect();
            let g_q = graph.backward(l_q_var, &theta)?;
            let lambda = T::of(self.config.lambda_q);
            for ((_, g), (_, v)) in actor.iter_mut().zip(&act) {
                if let Some(extra) = g_q.get(v) {
                    g.add_assign(&extra.scale(lambda));
                }
            }
        }
        let critic = match (obj.l_r, self.config.lambda_r > 0.0) {
            (Some(l_r_var), true) => {
                let phi: Vec<_> = crit.iter().map(|(_, v)| *v).collect();
                let g_r = graph.backward(l_r_var, &phi)?;
                let lambda = T::of(self.config.lambda_r);
                crit.iter().map(|(id, v)| (*id, g_r.get_or_zeros(v).scale(lambda))).collect()
            }
            _ => Vec::new(),
        };

        let correct = full.correct(&batch.labels).iter().filter(|&&c| c).count();
        let bundle = LossBundle {
            l_c,
            l_q,
            l_r,
            q_values: q_means,
            rewards,
            qr_gap: (gap_count > 0).then(|| gap_sum / gap_count as f64),
            correct,
            batch_size: n,
        };
        Ok(StepGradients { backbone: collect(&g_c, &bb), actor, critic, bundle, observed: obj.pass.observed })
    }

    /// Applies partitioned gradients with the current learning rate.
    pub fn apply(&mut self, grads: StepGradients<T>) -> LossBundle {
        let lr = self.learning_rate();
        let (wd, cwd) = (self.config.weight_decay, self.config.critic_weight_decay);
        for (id, g) in grads.backbone.iter().chain(&grads.actor) {
            self.optimizer.step(&mut self.network.params, *id, g, lr, wd);
        }
        for (id, g) in &grads.critic {
            self.optimizer.step(&mut self.network.params, *id, g, lr, cwd);
        }
        self.network.update_running(&grads.observed);
        grads.bundle
    }

    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<LossBundle> {
        let grads = self.gradients(batch)?;
        Ok(self.apply(grads))
    }

    /// One pass over `train` in shuffled, augmented mini-batches, then an
    /// evaluation on `val`. Appends to and returns the history row.
    pub fn run_epoch(&mut self, train: &LabeledImages<T>, val: Option<&LabeledImages<T>>) -> Result<EpochMetrics> {
        let batches = shuffled_batches(train.len(), self.config.batch_size, &mut self.rng);
        let enabled_blocks = self.network.blocks_in(&self.enabled_stages());
        let reinforced = self.config.method == Method::Reinforced;
        let mut acc = EpochAccumulator::default();
        for indices in batches {
            let mut batch = train.batch(&indices);
            batch.images = self.augmentation.apply(&batch.images, &mut self.rng);
            let bundle = self.train_step(&batch)?;
            acc.add(&bundle);
        }
        let val_accuracy = match val {
            Some(v) => Some(accuracy(&self.network, v, self.config.batch_size.max(1))?),
            None => None,
        };
        let metrics = acc.finish(self.epoch, self.learning_rate(), val_accuracy, reinforced.then_some(&enabled_blocks));
        self.history.push(metrics.clone());
        self.epoch += 1;
        Ok(metrics)
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn train(&mut self, train: &LabeledImages<T>, val: Option<&LabeledImages<T>>) -> Result<&[EpochMetrics]> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train, val)?;
        }
        Ok(&self.history)
    }
}

#[derive(Default)]
struct EpochAccumulator {
    samples: usize,
    correct: usize,
    l_c: f64,
    l_q: f64,
    l_r: f64,
    q: BTreeMap<BlockId, (f64, usize)>,
    r: BTreeMap<BlockId, (f64, usize)>,
    gap: (f64, usize),
}

impl EpochAccumulator {
    fn add(&mut self, b: &LossBundle) {
        let n = b.batch_size;
        self.samples += n;
        self.correct += b.correct;
        self.l_c += b.l_c * n as f64;
        self.l_q += b.l_q * n as f64;
        self.l_r += b.l_r * n as f64;
        for (id, q) in &b.q_values {
            let e = self.q.entry(*id).or_default();
            e.0 += q * n as f64;
            e.1 += n;
        }
        for rec in &b.rewards {
            let e = self.r.entry(rec.block).or_default();
            e.0 += rec.rewards.iter().sum::<f64>();
            e.1 += rec.rewards.len();
        }
        if let Some(g) = b.qr_gap {
            self.gap.0 += g * n as f64;
            self.gap.1 += n;
        }
    }

    fn finish(self, epoch: usize, lr: f64, val: Option<f64>, blocks: Option<&Vec<BlockId>>) -> EpochMetrics {
        let s = self.samples.max(1) as f64;
        let mean = |m: &BTreeMap<BlockId, (f64, usize)>, id: &BlockId| {
            m.get(id).filter(|e| e.1 > 0).map(|e| e.0 / e.1 as f64)
        };
        let blocks = blocks
            .map(|ids| {
                ids.iter()
                    .map(|id| BlockMetrics { block: *id, mean_q: mean(&self.q, id), mean_r: mean(&self.r, id) })
                    .collect()
            })
            .unwrap_or_default();
        EpochMetrics {
            epoch,
            learning_rate: lr,
            train_accuracy: self.correct as f64 / s,
            val_accuracy: val,
            l_c: self.l_c / s,
            l_q: self.l_q / s,
            l_r: self.l_r / s,
            blocks,
            qr_gap: (self.gap.1 > 0).then(|| self.gap.0 / self.gap.1 as f64),
        }
    }
}

/// Top-1 accuracy with running normalization statistics.
pub fn accuracy<T: Float>(network: &Network<T>, data: &LabeledImages<T>, batch_size: usize) -> Result<f64> {
    let mut correct = 0;
    for batch in data.sequential_batches(batch_size) {
        let (pred, _) = network.predict(&batch.images, NormMode::Running, &Overrides::new())?;
        correct += pred.argmax().iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}
