//! Attention actors: functions from a block's feature state to a
//! recalibration map ("action") with every element in (0, 1).
//!
//! Graph-level actors take and return [`Var`]s shaped for broadcasting
//! against `[N, C, H, W]` features: channel and style actions are
//! `[N, C, 1, 1]`, spatial actions are `[N, 1, H, W]`. [`AttentionAction`]
//! is the detached value form, `(N, C)` or `(N, H, W)`.

use dreal_tensor::{concat, Float, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{uniform, BatchNorm, ForwardCtx, NormMode, RunningStats};
use crate::params::{ParamGroup, ParamId, ParamStore};

pub const SPATIAL_KERNEL: usize = 7;
pub const SPATIAL_PADDING: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Channel,
    Spatial,
    Style,
}

impl ActionKind {
    /// Spatial maps broadcast over channels; the others over locations.
    pub fn is_spatial(self) -> bool {
        self == ActionKind::Spatial
    }
}

/// Detached attention map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionAction<T> {
    pub kind: ActionKind,
    /// `(N, C)` for channel and style maps, `(N, H, W)` for spatial maps.
    pub values: Tensor<T>,
}

impl<T: Float> AttentionAction<T> {
    pub fn new(kind: ActionKind, values: Tensor<T>) -> Result<Self> {
        let expected = if kind.is_spatial() { 3 } else { 2 };
        if values.rank() != expected {
            return Err(Error::Config(format!(
                "{kind:?} action needs rank {expected}, got shape {:?}",
                values.shape()
            )));
        }
        Ok(Self { kind, values })
    }

    /// An action of all ones, which leaves features untouched.
    pub fn identity(kind: ActionKind, batch: usize, channels: usize, height: usize, width: usize) -> Self {
        let values = if kind.is_spatial() {
            Tensor::ones([batch, height, width])
        } else {
            Tensor::ones([batch, channels])
        };
        Self { kind, values }
    }

    pub fn batch(&self) -> usize {
        self.values.dim(0)
    }

    /// Shape used to multiply against `[N, C, H, W]` features.
    pub fn broadcast_shape(&self) -> Vec<usize> {
        let s = self.values.shape();
        if self.kind.is_spatial() {
            vec![s[0], 1, s[1], s[2]]
        } else {
            vec![s[0], s[1], 1, 1]
        }
    }

    pub fn to_var<'g>(&self, graph: &'g Graph<T>) -> Var<'g, T> {
        let t = self.values.reshape(self.broadcast_shape()).expect("same element count");
        graph.constant(t)
    }

    /// Detached value of a graph action in broadcast layout.
    pub fn from_var(kind: ActionKind, var: Var<'_, T>) -> Self {
        let v = var.value();
        let s = v.shape();
        let shape = if kind.is_spatial() { vec![s[0], s[2], s[3]] } else { vec![s[0], s[1]] };
        Self { kind, values: v.reshape(shape).expect("broadcast layout") }
    }

    /// Per-sample mean of the action elements.
    pub fn sample_means(&self) -> Vec<T> {
        let per = self.values.numel() / self.batch().max(1);
        self.values.data().chunks(per.max(1)).map(mean_of).collect()
    }
}

fn mean_of<T: Float>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::of(xs.len() as f64)
}

/// Replaces every element of each sample's action with that sample's mean.
pub fn mean_substitute<T: Float>(action: &AttentionAction<T>) -> AttentionAction<T> {
    let per = action.values.numel() / action.batch().max(1);
    let mut values = action.values.clone();
    for chunk in values.data_mut().chunks_mut(per.max(1)) {
        let m = mean_of(chunk);
        chunk.iter_mut().for_each(|v| *v = m);
    }
    AttentionAction { kind: action.kind, values }
}

/// Graph form of [`mean_substitute`] for an action of any `[N, ...]` shape.
pub fn mean_substitute_var<'g, T: Float>(action: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = action.shape();
    let per: usize = shape[1..].iter().product();
    let flat = action.reshape([shape[0], per])?;
    Ok(flat.mean_axis(1)?.broadcast_to([shape[0], per])?.reshape(shape)?)
}

/// Global average pooling: per-sample channel descriptor `[N, C]` of `[N, C, H, W]` features.
pub fn extract_var<'g, T: Float>(feature: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = feature.shape();
    if s.len() != 4 {
        return Err(Error::Config(format!("feature state must be [N, C, H, W], got {s:?}")));
    }
    Ok(feature.reshape([s[0], s[1], s[2] * s[3]])?.mean_axis(2)?.reshape([s[0], s[1]])?)
}

pub fn extract<T: Float>(feature: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Graph::inference();
    Ok(extract_var(g.constant(feature.clone()))?.value().as_ref().clone())
}

/// `F ⊙ A` with the action broadcast over the axes it does not cover.
pub fn recalibrate_var<'g, T: Float>(feature: Var<'g, T>, action: Var<'g, T>) -> Result<Var<'g, T>> {
    let (f, a) = (feature.shape(), action.shape());
    let channel_like = a.len() == 4 && a[0] == f[0] && a[1] == f[1] && a[2] == 1 && a[3] == 1;
    let spatial_like = a.len() == 4 && a[0] == f[0] && a[1] == 1 && a[2] == f[2] && a[3] == f[3];
    if f.len() != 4 || !(channel_like || spatial_like) {
        return Err(Error::Shape(dreal_tensor::TensorError::Broadcast { lhs: f, rhs: a }));
    }
    Ok(feature.mul(action)?)
}

pub fn recalibrate<T: Float>(feature: &Tensor<T>, action: &AttentionAction<T>) -> Result<Tensor<T>> {
    let g = Graph::inference();
    let shape = action.broadcast_shape();
    let a = g.constant(
        action
            .values
            .reshape(shape)
            .map_err(Error::Shape)?,
    );
    Ok(recalibrate_var(g.constant(feature.clone()), a)?.value().as_ref().clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPooling {
    /// Squeeze-and-excitation: average-pooled descriptor only.
    Average,
    /// Average and max descriptors through a shared bottleneck, summed.
    AverageAndMax,
}

/// Bottleneck channel attention `σ(W1 δ(W0 pool(F) + b0) + b1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelActor {
    pub w0: ParamId,
    pub b0: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub pooling: ChannelPooling,
}

impl ChannelActor {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        pooling: ChannelPooling,
        rng: &mut impl Rng,
    ) -> Self {
        let g = ParamGroup::Actor;
        let w0 = store.add(format!("{name}.w0"), g, uniform(&[hidden, channels], 1.0 / (channels as f64).sqrt(), rng));
        let b0 = store.add(format!("{name}.b0"), g, Tensor::zeros([hidden]));
        let w1 = store.add(format!("{name}.w1"), g, uniform(&[channels, hidden], 1.0 / (hidden as f64).sqrt(), rng));
        let b1 = store.add(format!("{name}.b1"), g, Tensor::zeros([channels]));
        Self { w0, b0, w1, b1, pooling }
    }

    fn bottleneck<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let b = ctx.bound;
        let hidden = x.linear(b[self.w0], Some(b[self.b0]))?.relu();
        Ok(hidden.linear(b[self.w1], Some(b[self.b1]))?)
    }

    pub fn act<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, feature: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = feature.shape();
        let (n, c) = (s[0], s[1]);
        let mut pre = self.bottleneck(ctx, extract_var(feature)?)?;
        if self.pooling == ChannelPooling::AverageAndMax {
            let max = feature.reshape([n, c, s[2] * s[3]])?.max_axis(2)?.reshape([n, c])?;
            pre = pre.add(self.bottleneck(ctx, max)?)?;
        }
        Ok(pre.sigmoid().reshape([n, c, 1, 1])?)
    }
}

/// `σ(conv7x7([mean_c(F); max_c(F)]) + b)`, one weight per location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialActor {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl SpatialActor {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, rng: &mut impl Rng) -> Self {
        let k = SPATIAL_KERNEL;
        let bound = 1.0 / ((2 * k * k) as f64).sqrt();
        let kernel = store.add(format!("{name}.kernel"), ParamGroup::Actor, uniform(&[1, 2, k, k], bound, rng));
        let bias = store.add(format!("{name}.bias"), ParamGroup::Actor, Tensor::zeros([1]));
        Self { kernel, bias }
    }

    pub fn act<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, feature: Var<'g, T>) -> Result<Var<'g, T>> {
        let pooled = concat(&[feature.mean_axis(1)?, feature.max_axis(1)?], 1)?;
        let conv = pooled.conv2d(ctx.bound[self.kernel], 1, SPATIAL_PADDING)?;
        Ok(conv.add(ctx.bound[self.bias].reshape([1, 1, 1, 1])?)?.sigmoid())
    }
}

/// Style recalibration `σ(BN(w_avg·mean + w_std·std + b))` per channel,
/// with population standard deviation over the spatial extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleActor {
    /// `[C, 2]`: column 0 weighs the mean, column 1 the deviation.
    pub cfc_weight: ParamId,
    pub cfc_bias: ParamId,
    pub bn: BatchNorm,
    /// Reject single-location inputs instead of treating their deviation as 0.
    pub strict: bool,
}

impl StyleActor {
    /// Channel-wise weights start at zero, normalization at identity.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        running: &mut Vec<RunningStats<T>>,
        name: &str,
        channels: usize,
    ) -> Self {
        let g = ParamGroup::Actor;
        let cfc_weight = store.add(format!("{name}.cfc_weight"), g, Tensor::zeros([channels, 2]));
        let cfc_bias = store.add(format!("{name}.cfc_bias"), g, Tensor::zeros([channels]));
        let bn = BatchNorm::new(store, running, &format!("{name}.bn"), g, channels);
        Self { cfc_weight, cfc_bias, bn, strict: false }
    }

    pub fn act<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, feature: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = feature.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if self.strict && hw < 2 {
            return Err(Error::Degenerate(format!("style statistics need at least 2 locations, got {hw}")));
        }
        let flat = feature.reshape([n, c, hw])?;
        let mean = flat.mean_axis(2)?;
        let std = flat.sub(mean)?.sqr().mean_axis(2)?.sqrt();
        let w = ctx.bound[self.cfc_weight];
        let w_mean = w.narrow(1, 0, 1)?.reshape([1, c])?;
        let w_std = w.narrow(1, 1, 1)?.reshape([1, c])?;
        let z = mean
            .reshape([n, c])?
            .mul(w_mean)?
            .add(std.reshape([n, c])?.mul(w_std)?)?
            .add(ctx.bound[self.cfc_bias].reshape([1, c])?)?;
        Ok(self.bn.forward(ctx, z)?.sigmoid().reshape([n, c, 1, 1])?)
    }
}

/// Runs a graph-level actor on a detached feature tensor.
pub fn evaluate<T: Float, F>(
    store: &ParamStore<T>,
    running: &[RunningStats<T>],
    norm: NormMode,
    kind: ActionKind,
    feature: &Tensor<T>,
    actor: F,
) -> Result<AttentionAction<T>>
where
    F: for<'a, 'g> Fn(&ForwardCtx<'a, 'g, T>, Var<'g, T>) -> Result<Var<'g, T>>,
{
    let g = Graph::inference();
    let bound = store.bind(&g);
    let ctx = ForwardCtx::new(&bound, norm, running);
    let out = actor(&ctx, g.constant(feature.clone()))?;
    Ok(AttentionAction::from_var(kind, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feature(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn extract_constant_and_impulse() {
        let f = Tensor::<f64>::full([2, 3, 4, 5], 2.0);
        assert!(extract(&f).unwrap().data().iter().all(|&v| v == 2.0));

        let mut impulse = Tensor::<f64>::zeros([1, 3, 4, 5]);
        impulse.data_mut()[20 + 7] = 20.0;
        assert_eq!(extract(&impulse).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn recalibrate_identity_annihilator_and_channels() {
        let f = feature([2, 2, 3, 3], 1);
        let ones = AttentionAction::identity(ActionKind::Channel, 2, 2, 3, 3);
        assert_eq!(recalibrate(&f, &ones).unwrap(), f);
        let zeros = AttentionAction::new(ActionKind::Spatial, Tensor::zeros([2, 3, 3])).unwrap();
        assert!(recalibrate(&f, &zeros).unwrap().data().iter().all(|&v| v == 0.0));

        let half = AttentionAction::new(ActionKind::Channel, Tensor::from_vec([2, 2], vec![0.5, 1.0, 0.5, 1.0]).unwrap())
            .unwrap();
        let out = recalibrate(&f, &half).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        let scale = if c == 0 { 0.5 } else { 1.0 };
                        assert_eq!(out.at(&[n, c, y, x]), f.at(&[n, c, y, x]) * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn recalibrate_rejects_mismatched_maps() {
        let f = feature([2, 2, 3, 3], 1);
        let wrong = AttentionAction::new(ActionKind::Channel, Tensor::ones([2, 5])).unwrap();
        assert!(matches!(recalibrate(&f, &wrong), Err(Error::Shape(_))));
        let wrong = AttentionAction::new(ActionKind::Spatial, Tensor::ones([2, 3, 4])).unwrap();
        assert!(recalibrate(&f, &wrong).is_err());
    }

    #[test]
    fn mean_substitute_examples() {
        let a = AttentionAction::new(ActionKind::Channel, Tensor::from_vec([1, 2], vec![0.2f64, 0.8]).unwrap()).unwrap();
        let m = mean_substitute(&a);
        assert_eq!(m.values.data(), &[0.5, 0.5]);
        let constant = AttentionAction::new(ActionKind::Style, Tensor::full([2, 4], 0.3f64)).unwrap();
        assert_eq!(mean_substitute(&constant), constant);
    }

    #[test]
    fn zero_input_gives_half() {
        let mut store = ParamStore::<f64>::new();
        let mut running = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let se = ChannelActor::new(&mut store, "se", 8, 4, ChannelPooling::Average, &mut rng);
        let cbam = ChannelActor::new(&mut store, "cbam", 8, 4, ChannelPooling::AverageAndMax, &mut rng);
        let spatial = SpatialActor::new(&mut store, "sp", &mut rng);
        let style = StyleActor::new(&mut store, &mut running, "style", 8);
        let zero = Tensor::zeros([2, 8, 3, 3]);
        type Act<'x> = dyn for<'a, 'g> Fn(&ForwardCtx<'a, 'g, f64>, Var<'g, f64>) -> Result<Var<'g, f64>> + 'x;
        let run = |kind, f: &Act<'_>| {
            evaluate(&store, &running, NormMode::Batch, kind, &zero, f).unwrap()
        };
        for action in [
            run(ActionKind::Channel, &|c, f| se.act(c, f)),
            run(ActionKind::Channel, &|c, f| cbam.act(c, f)),
            run(ActionKind::Spatial, &|c, f| spatial.act(c, f)),
            run(ActionKind::Style, &|c, f| style.act(c, f)),
        ] {
            assert!(action.values.data().iter().all(|&v| v == 0.5), "{:?}", action.kind);
        }
    }

    #[test]
    fn strict_style_rejects_single_location() {
        let mut store = ParamStore::<f64>::new();
        let mut running = Vec::new();
        let mut style = StyleActor::new(&mut store, &mut running, "style", 4);
        let f = feature([3, 4, 1, 1], 2);
        let run = |s: &StyleActor| evaluate(&store, &running, NormMode::Batch, ActionKind::Style, &f, |c, x| s.act(c, x));
        assert!(run(&style).is_ok());
        style.strict = true;
        assert!(matches!(run(&style), Err(Error::Degenerate(_))));
    }
}
