//! Pre-activation residual network with an attention hook at the end of
//! every block's residual branch, before the skip addition.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use dreal_tensor::{BatchStats, Float, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actors::{
    mean_substitute_var, recalibrate_var, ActionKind, AttentionAction, ChannelActor, ChannelPooling,
    SpatialActor, StyleActor,
};
use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, ForwardCtx, Linear, NormMode, RunningStats};
use crate::params::{Bound, ParamGroup, ParamStore};

/// Smallest bottleneck width of a channel actor.
pub const MIN_HIDDEN: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    Channel,
    SpatialChannel,
    Style,
    None,
}

impl AttentionKind {
    /// Action shapes produced by one block's attention unit, in application order.
    pub fn action_kinds(self) -> &'static [ActionKind] {
        match self {
            AttentionKind::Channel => &[ActionKind::Channel],
            AttentionKind::SpatialChannel => &[ActionKind::Channel, ActionKind::Spatial],
            AttentionKind::Style => &[ActionKind::Style],
            AttentionKind::None => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub num_blocks: usize,
    pub channels: usize,
    /// Output `(H, W)` of every block in the stage.
    pub spatial_size: [usize; 2],
    /// Stride of the stage's first block.
    #[serde(default = "default_stride")]
    pub stride_in: usize,
}

fn default_stride() -> usize {
    1
}

fn default_classes() -> usize {
    10
}

fn default_reduction() -> usize {
    16
}

fn default_input() -> [usize; 3] {
    [16, 16, 3]
}

fn default_stages() -> Vec<StageSpec> {
    NetworkConfig::desk_stages(3, default_input())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_stages")]
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub attention_kind: AttentionKind,
    #[serde(default = "default_reduction")]
    pub reduction_ratio: usize,
    /// `(H, W, C_in)`
    #[serde(default = "default_input")]
    pub input_shape: [usize; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stages: default_stages(),
            num_classes: default_classes(),
            attention_kind: AttentionKind::default(),
            reduction_ratio: default_reduction(),
            input_shape: default_input(),
        }
    }
}

impl NetworkConfig {
    /// Three stages of 16/32/64 channels, the second and third halving the
    /// resolution. `blocks = 3` gives the 20-layer variant.
    pub fn desk_stages(blocks: usize, input_shape: [usize; 3]) -> Vec<StageSpec> {
        let (mut h, mut w) = (input_shape[0], input_shape[1]);
        [(16, 1), (32, 2), (64, 2)]
            .into_iter()
            .map(|(channels, stride)| {
                h = h.div_ceil(stride);
                w = w.div_ceil(stride);
                StageSpec { num_blocks: blocks, channels, spatial_size: [h, w], stride_in: stride }
            })
            .collect()
    }

    pub fn desk(blocks: usize, attention_kind: AttentionKind, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self {
            stages: Self::desk_stages(blocks, input_shape),
            num_classes,
            attention_kind,
            reduction_ratio: default_reduction(),
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return bad("network.stages must not be empty".into());
        }
        if self.num_classes < 2 {
            return bad(format!("network.num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.reduction_ratio == 0 {
            return bad("network.reduction_ratio must be at least 1".into());
        }
        if self.input_shape.contains(&0) {
            return bad(format!("network.input_shape must be positive, got {:?}", self.input_shape));
        }
        let (mut h, mut w) = (self.input_shape[0], self.input_shape[1]);
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_blocks == 0 {
                return bad(format!("network.stages[{i}].num_blocks must be at least 1"));
            }
            if s.channels == 0 {
                return bad(format!("network.stages[{i}].channels must be positive"));
            }
            if s.stride_in == 0 {
                return bad(format!("network.stages[{i}].stride_in must be positive"));
            }
            if s.channels % self.reduction_ratio != 0 {
                return bad(format!(
                    "network.reduction_ratio {} must divide network.stages[{i}].channels {}",
                    self.reduction_ratio, s.channels
                ));
            }
            h = h.div_ceil(s.stride_in);
            w = w.div_ceil(s.stride_in);
            if s.spatial_size != [h, w] {
                return bad(format!(
                    "network.stages[{i}].spatial_size {:?} does not match the {:?} produced by stride {}",
                    s.spatial_size,
                    [h, w],
                    s.stride_in
                ));
            }
        }
        Ok(())
    }

    /// Bottleneck width of channel actors at `channels`.
    pub fn hidden_width(&self, channels: usize) -> usize {
        (channels / self.reduction_ratio.max(1)).max(MIN_HIDDEN).min(channels)
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.num_blocks).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub stage: usize,
    pub block: usize,
}

impl BlockId {
    pub fn new(stage: usize, block: usize) -> Self {
        Self { stage, block }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}b{}", self.stage, self.block)
    }
}

/// Attention unit of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttentionUnit {
    Channel(ChannelActor),
    /// Channel map applied first; the spatial actor reads the channel-recalibrated features.
    SpatialChannel { channel: ChannelActor, spatial: SpatialActor },
    Style(StyleActor),
}

/// Replacement for a block's attention during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockOverride<T> {
    /// Every action of the block replaced by its own per-sample mean.
    MeanSubstitute,
    /// Fixed actions, one per action kind of the block in application order.
    Actions(Vec<AttentionAction<T>>),
}

pub type Overrides<T> = BTreeMap<BlockId, BlockOverride<T>>;

/// What one attention-equipped block saw and did during a forward pass.
#[derive(Clone, Debug)]
pub struct BlockTrace<'g, T: Float> {
    pub id: BlockId,
    /// Residual-branch output before recalibration, `[N, C, H, W]`.
    pub feature: Var<'g, T>,
    /// Actor outputs, in broadcast layout.
    pub native: Vec<(ActionKind, Var<'g, T>)>,
    /// Actions actually multiplied into the features.
    pub applied: Vec<(ActionKind, Var<'g, T>)>,
}

/// Detached copy of a [`BlockTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord<T> {
    pub id: BlockId,
    pub feature: Tensor<T>,
    pub native: Vec<AttentionAction<T>>,
    pub applied: Vec<AttentionAction<T>>,
}

impl<T: Float> From<&BlockTrace<'_, T>> for TraceRecord<T> {
    fn from(t: &BlockTrace<'_, T>) -> Self {
        let detach = |v: &Vec<(ActionKind, Var<'_, T>)>| {
            v.iter().map(|(k, var)| AttentionAction::from_var(*k, *var)).collect()
        };
        Self { id: t.id, feature: t.feature.value().as_ref().clone(), native: detach(&t.native), applied: detach(&t.applied) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// `[N, K]`
    pub logits: Tensor<T>,
    /// Row-wise softmax of `logits`.
    pub probabilities: Tensor<T>,
}

impl<T: Float> Prediction<T> {
    pub fn from_logits(logits: Tensor<T>) -> Result<Self> {
        let probabilities = logits.softmax_rows()?;
        Ok(Self { logits, probabilities })
    }

    pub fn batch(&self) -> usize {
        self.logits.dim(0)
    }

    pub fn classes(&self) -> usize {
        self.logits.dim(1)
    }

    pub fn prob(&self, sample: usize, class: usize) -> T {
        self.probabilities.data()[sample * self.classes() + class]
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.logits.argmax_rows().expect("rank 2")
    }

    /// Whether the labelled class has the largest probability (ties count as correct).
    pub fn correct(&self, labels: &[usize]) -> Vec<bool> {
        let k = self.classes();
        self.probabilities
            .data()
            .chunks(k)
            .zip(labels)
            .map(|(row, &l)| row.iter().all(|&p| row[l] >= p))
            .collect()
    }
}

pub struct ForwardPass<'g, T: Float> {
    pub logits: Var<'g, T>,
    pub traces: Vec<BlockTrace<'g, T>>,
    /// Activations entering each block that ran, in forward order.
    pub block_inputs: Vec<(BlockId, Var<'g, T>)>,
    /// Batch statistics seen by normalization layers in [`NormMode::Batch`].
    pub observed: Vec<(usize, BatchStats<T>)>,
}

impl<T: Float> ForwardPass<'_, T> {
    pub fn prediction(&self) -> Result<Prediction<T>> {
        Prediction::from_logits(self.logits.value().as_ref().clone())
    }

    pub fn trace(&self, id: BlockId) -> Option<&BlockTrace<'_, T>> {
        self.traces.iter().find(|t| t.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    bn1: BatchNorm,
    conv1: Conv2d,
    bn2: BatchNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
    attention: Option<AttentionUnit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stage {
    blocks: Vec<Block>,
    critics: Vec<Critic>,
}

/// A residual classifier whose parameters are split into backbone, actor
/// and critic groups.
#[derive(Clone, Debug)]
pub struct Network<T: Float> {
    config: NetworkConfig,
    pub params: ParamStore<T>,
    pub running: Vec<RunningStats<T>>,
    stem: Conv2d,
    stages: Vec<Stage>,
    head_bn: BatchNorm,
    fc: Linear,
    passes: Cell<usize>,
}

/// Validates `config` and initializes every parameter from `rng`.
pub fn build_network<T: Float>(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Network<T>> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut running = Vec::new();
    let bb = ParamGroup::Backbone;
    let [_, _, c_in] = config.input_shape;
    let first = config.stages[0].channels;
    let stem = Conv2d::new(&mut params, "stem", bb, c_in, first, 3, 1, 1, rng);

    let mut in_c = first;
    let mut stages = Vec::with_capacity(config.stages.len());
    for (s, spec) in config.stages.iter().enumerate() {
        let c = spec.channels;
        let mut blocks = Vec::with_capacity(spec.num_blocks);
        for b in 0..spec.num_blocks {
            let name = format!("stage{s}.block{b}");
            let stride = if b == 0 { spec.stride_in } else { 1 };
            let bn1 = BatchNorm::new(&mut params, &mut running, &format!("{name}.bn1"), bb, in_c);
            let conv1 = Conv2d::new(&mut params, &format!("{name}.conv1"), bb, in_c, c, 3, stride, 1, rng);
            let bn2 = BatchNorm::new(&mut params, &mut running, &format!("{name}.bn2"), bb, c);
            let conv2 = Conv2d::new(&mut params, &format!("{name}.conv2"), bb, c, c, 3, 1, 1, rng);
            let shortcut = (stride != 1 || in_c != c)
                .then(|| Conv2d::new(&mut params, &format!("{name}.shortcut"), bb, in_c, c, 1, stride, 0, rng));
            let hidden = config.hidden_width(c);
            let att = format!("{name}.attention");
            let attention = match config.attention_kind {
                AttentionKind::None => None,
                AttentionKind::Channel => Some(AttentionUnit::Channel(ChannelActor::new(
                    &mut params,
                    &att,
                    c,
                    hidden,
                    ChannelPooling::Average,
                    rng,
                ))),
                AttentionKind::SpatialChannel => Some(AttentionUnit::SpatialChannel {
                    channel: ChannelActor::new(
                        &mut params,
                        &format!("{att}.channel"),
                        c,
                        hidden,
                        ChannelPooling::AverageAndMax,
                        rng,
                    ),
                    spatial: SpatialActor::new(&mut params, &format!("{att}.spatial"), rng),
                }),
                AttentionKind::Style => {
                    Some(AttentionUnit::Style(StyleActor::new(&mut params, &mut running, &att, c)))
                }
            };
            blocks.push(Block { bn1, conv1, bn2, conv2, shortcut, attention });
            in_c = c;
        }
        let [h, w] = spec.spatial_size;
        let critics = config
            .attention_kind
            .action_kinds()
            .iter()
            .map(|&kind| {
                let dim = if kind.is_spatial() { h * w } else { c };
                let name = format!("stage{s}.critic.{}", format!("{kind:?}").to_lowercase());
                Critic::new(&mut params, &name, dim, kind, rng)
            })
            .collect();
        stages.push(Stage { blocks, critics });
    }
    let head_bn = BatchNorm::new(&mut params, &mut running, "head.bn", bb, in_c);
    let fc = Linear::new(&mut params, "head.fc", bb, in_c, config.num_classes, rng);
    Ok(Network { config: config.clone(), params, running, stem, stages, head_bn, fc, passes: Cell::new(0) })
}

impl AttentionUnit {
    /// Returns (recalibrated features, native actions, applied actions).
    #[allow(clippy::type_complexity)]
    fn apply<'g, T: Float>(
        &self,
        ctx: &ForwardCtx<'_, 'g, T>,
        feature: Var<'g, T>,
        replace: Option<&BlockOverride<T>>,
    ) -> Result<(Var<'g, T>, Vec<(ActionKind, Var<'g, T>)>, Vec<(ActionKind, Var<'g, T>)>)> {
        let graph = feature.graph();
        let fixed = |actions: &[AttentionAction<T>], kinds: &[ActionKind]| -> Result<Vec<Var<'g, T>>> {
            let got: Vec<_> = actions.iter().map(|a| a.kind).collect();
            if got != kinds {
                return Err(Error::Config(format!("override actions {got:?} for a block expecting {kinds:?}")));
            }
            Ok(actions.iter().map(|a| a.to_var(graph)).collect())
        };
        match self {
            AttentionUnit::Channel(_) | AttentionUnit::Style(_) => {
                let (kind, native) = match self {
                    AttentionUnit::Channel(a) => (ActionKind::Channel, a.act(ctx, feature)?),
                    AttentionUnit::Style(a) => (ActionKind::Style, a.act(ctx, feature)?),
                    AttentionUnit::SpatialChannel { .. } => unreachable!("matched above"),
                };
                let applied = match replace {
                    None => native,
                    Some(BlockOverride::MeanSubstitute) => mean_substitute_var(native)?,
                    Some(BlockOverride::Actions(a)) => fixed(a, &[kind])?[0],
                };
                let out = recalibrate_var(feature, applied)?;
                Ok((out, vec![(kind, native)], vec![(kind, applied)]))
            }
            AttentionUnit::SpatialChannel { channel, spatial } => {
                let native_c = channel.act(ctx, feature)?;
                let after_channel = recalibrate_var(feature, native_c)?;
                let native_s = spatial.act(ctx, after_channel)?;
                let native = vec![(ActionKind::Channel, native_c), (ActionKind::Spatial, native_s)];
                let (out, ac, asp) = match replace {
                    None => (recalibrate_var(after_channel, native_s)?, native_c, native_s),
                    Some(r) => {
                        let (ac, asp) = match r {
                            BlockOverride::MeanSubstitute => (mean_substitute_var(native_c)?, mean_substitute_var(native_s)?),
                            BlockOverride::Actions(a) => {
                                let v = fixed(a, &[ActionKind::Channel, ActionKind::Spatial])?;
                                (v[0], v[1])
                            }
                        };
                        (recalibrate_var(recalibrate_var(feature, ac)?, asp)?, ac, asp)
                    }
                };
                Ok((out, native, vec![(ActionKind::Channel, ac), (ActionKind::Spatial, asp)]))
            }
        }
    }
}

impl Block {
    fn forward<'g, T: Float>(
        &self,
        ctx: &ForwardCtx<'_, 'g, T>,
        x: Var<'g, T>,
        id: BlockId,
        replace: Option<&BlockOverride<T>>,
    ) -> Result<(Var<'g, T>, Option<BlockTrace<'g, T>>)> {
        let pre = self.bn1.forward(ctx, x)?.relu();
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(ctx, pre)?,
            None => x,
        };
        let h = self.conv1.forward(ctx, pre)?;
        let h = self.bn2.forward(ctx, h)?.relu();
        let feature = self.conv2.forward(ctx, h)?;
        match &self.attention {
            None => Ok((feature.add(skip)?, None)),
            Some(unit) => {
                let (out, native, applied) = unit.apply(ctx, feature, replace)?;
                Ok((out.add(skip)?, Some(BlockTrace { id, feature, native, applied })))
            }
        }
    }
}

impl<T: Float> Network<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn attention_kind(&self) -> AttentionKind {
        self.config.attention_kind
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn blocks_in_stage(&self, stage: usize) -> usize {
        self.stages[stage].blocks.len()
    }

    /// Attention-equipped blocks in forward order.
    pub fn attention_blocks(&self) -> Vec<BlockId> {
        let mut ids = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                if block.attention.is_some() {
                    ids.push(BlockId::new(s, b));
                }
            }
        }
        ids
    }

    pub fn has_block(&self, id: BlockId) -> bool {
        self.stages
            .get(id.stage)
            .and_then(|s| s.blocks.get(id.block))
            .is_some_and(|b| b.attention.is_some())
    }

    /// Number of actor modules (a spatial-channel unit counts as two).
    pub fn num_actors(&self) -> usize {
        self.attention_blocks().len() * self.config.attention_kind.action_kinds().len()
    }

    pub fn num_critics(&self) -> usize {
        self.stages.iter().map(|s| s.critics.len()).sum()
    }

    pub fn critics(&self, stage: usize) -> &[Critic] {
        &self.stages[stage].critics
    }

    pub fn attention_unit(&self, id: BlockId) -> Option<&AttentionUnit> {
        self.stages.get(id.stage)?.blocks.get(id.block)?.attention.as_ref()
    }

    /// Forward passes run so far (any graph, any mode).
    pub fn forward_passes(&self) -> usize {
        self.passes.get()
    }

    pub fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [h, w, c] = self.config.input_shape;
        match input.shape() {
            &[n, ci, hi, wi] if n > 0 && ci == c && hi == h && wi == w => Ok(()),
            s => Err(Error::Config(format!("input batch {s:?} does not match [N, {c}, {h}, {w}]"))),
        }
    }

    /// Builds the forward graph. Blocks listed in `overrides` apply the
    /// override instead of their actor output; their actors still run and
    /// appear in the trace as `native`.
    pub fn forward<'g>(
        &self,
        graph: &'g Graph<T>,
        bound: &Bound<'g, T>,
        input: &Tensor<T>,
        norm: NormMode,
        overrides: &Overrides<T>,
    ) -> Result<ForwardPass<'g, T>> {
        self.check_input(input)?;
        self.check_overrides(overrides)?;
        self.passes.set(self.passes.get() + 1);
        let ctx = ForwardCtx::new(bound, norm, &self.running);
        let x = self.stem.forward(&ctx, graph.constant(input.clone()))?;
        self.run_blocks(&ctx, x, BlockId::new(0, 0), overrides)
    }

    /// Like [`Network::forward`] but starts at block `start`, whose input
    /// activations are `x`. Layers before `start` do not run, so their
    /// normalization statistics are not observed.
    pub fn forward_from<'g>(
        &self,
        graph: &'g Graph<T>,
        bound: &Bound<'g, T>,
        start: BlockId,
        x: &Tensor<T>,
        norm: NormMode,
        overrides: &Overrides<T>,
    ) -> Result<ForwardPass<'g, T>> {
        let expected = self.block_input_shape(start).ok_or(Error::UnknownBlock(start))?;
        if x.shape().len() != 4 || x.shape()[1..] != expected[..] || x.shape()[0] == 0 {
            return Err(Error::Config(format!(
                "input of block {start} must be [N, {}, {}, {}], got {:?}",
                expected[0],
                expected[1],
                expected[2],
                x.shape()
            )));
        }
        self.check_overrides(overrides)?;
        self.passes.set(self.passes.get() + 1);
        let ctx = ForwardCtx::new(bound, norm, &self.running);
        self.run_blocks(&ctx, graph.constant(x.clone()), start, overrides)
    }

    fn check_overrides(&self, overrides: &Overrides<T>) -> Result<()> {
        match overrides.keys().find(|id| !self.has_block(**id)) {
            Some(id) => Err(Error::UnknownBlock(*id)),
            None => Ok(()),
        }
    }

    /// `[C, H, W]` of the activations entering block `id`.
    fn block_input_shape(&self, id: BlockId) -> Option<[usize; 3]> {
        let stage = self.stages.get(id.stage)?;
        stage.blocks.get(id.block)?;
        let spec = &self.config.stages[id.stage];
        if id.block > 0 {
            return Some([spec.channels, spec.spatial_size[0], spec.spatial_size[1]]);
        }
        Some(match id.stage {
            0 => {
                let [h, w, _] = self.config.input_shape;
                [self.config.stages[0].channels, h, w]
            }
            s => {
                let prev = &self.config.stages[s - 1];
                [prev.channels, prev.spatial_size[0], prev.spatial_size[1]]
            }
        })
    }

    fn run_blocks<'g>(
        &self,
        ctx: &ForwardCtx<'_, 'g, T>,
        mut x: Var<'g, T>,
        start: BlockId,
        overrides: &Overrides<T>,
    ) -> Result<ForwardPass<'g, T>> {
        let mut traces = Vec::new();
        let mut inputs = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                let id = BlockId::new(s, b);
                if id < start {
                    continue;
                }
                inputs.push((id, x));
                let (y, trace) = block.forward(ctx, x, id, overrides.get(&id))?;
                x = y;
                traces.extend(trace);
            }
        }
        let x = self.head_bn.forward(ctx, x)?.relu();
        let s = x.shape();
        let pooled = x.reshape([s[0], s[1], s[2] * s[3]])?.mean_axis(2)?.reshape([s[0], s[1]])?;
        let logits = self.fc.forward(ctx, pooled)?;
        Ok(ForwardPass { logits, traces, block_inputs: inputs, observed: ctx.take_observed() })
    }

    /// Gradient-free forward pass returning detached results.
    pub fn predict(
        &self,
        input: &Tensor<T>,
        norm: NormMode,
        overrides: &Overrides<T>,
    ) -> Result<(Prediction<T>, Vec<TraceRecord<T>>)> {
        let graph = Graph::inference();
        let bound = self.params.bind(&graph);
        let pass = self.forward(&graph, &bound, input, norm, overrides)?;
        Ok((pass.prediction()?, pass.traces.iter().map(TraceRecord::from).collect()))
    }

    /// Folds observed batch statistics into the running statistics.
    pub fn update_running(&mut self, observed: &[(usize, BatchStats<T>)]) {
        for (slot, stats) in observed {
            self.running[*slot].update(stats);
        }
    }

    /// Critic rollouts for the listed stages: per block, one `[N, 1]`
    /// Q-value per critic of its stage (in action-kind order).
    pub fn critic_values<'g>(
        &self,
        bound: &Bound<'g, T>,
        traces: &[BlockTrace<'g, T>],
        stages: &[usize],
    ) -> Result<BTreeMap<BlockId, Vec<Var<'g, T>>>> {
        let mut out: BTreeMap<BlockId, Vec<Var<'g, T>>> = BTreeMap::new();
        for &s in stages {
            let stage = self.stages.get(s).ok_or(Error::Config(format!("no stage {s}")))?;
            let in_stage: Vec<_> = traces.iter().filter(|t| t.id.stage == s).collect();
            for (k, critic) in stage.critics.iter().enumerate() {
                let features: Vec<_> = in_stage.iter().map(|t| t.feature).collect();
                let actions: Vec<_> = in_stage.iter().map(|t| t.applied[k].1).collect();
                for (t, q) in in_stage.iter().zip(critic.rollout(bound, &features, &actions)?) {
                    out.entry(t.id).or_default().push(q);
                }
            }
        }
        Ok(out)
    }

    /// Copies every parameter of `group` whose name and shape match `other`.
    pub fn copy_group_from(&mut self, other: &Network<T>, group: ParamGroup) -> usize {
        let mut copied = 0;
        for id in self.params.ids_in(group).collect::<Vec<_>>() {
            let name = self.params.entry(id).name.clone();
            if let Some(src) = other.params.entries().iter().find(|e| e.name == name && e.group == group) {
                if self.params.set(id, src.value.clone()).is_ok() {
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Stage indices in order.
    pub fn stage_indices(&self) -> Vec<usize> {
        (0..self.stages.len()).collect()
    }

    /// Blocks with attention in the given stages.
    pub fn blocks_in(&self, stages: &BTreeSet<usize>) -> Vec<BlockId> {
        self.attention_blocks().into_iter().filter(|id| stages.contains(&id.stage)).collect()
    }
}
