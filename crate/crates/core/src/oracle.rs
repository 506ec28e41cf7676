//! Loop-based reference implementations of the attention actors and the
//! critic cell, plus randomized comparisons against the graph versions.
//! Everything here runs in `f64` with explicit accumulation.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use dreal_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::actors::{evaluate, ActionKind, ChannelActor, ChannelPooling, SpatialActor, StyleActor, SPATIAL_PADDING};
use crate::backbone::{build_network, AttentionKind, BlockId, Network, NetworkConfig, StageSpec};
use crate::critic::{Critic, CriticState};
use crate::data::Batch;
use crate::error::Result;
use crate::layers::{NormMode, BN_EPS};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::reward::RewardRecord;
use crate::trainer::{classification_loss, objectives, quality_loss};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dims4(t: &Tensor<f64>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// `σ(W1 relu(W0 p + b0) + b1)` per sample, summed over average and
/// (optionally) max descriptors before the sigmoid. Returns `[N * C]`.
pub fn channel_attention(
    f: &Tensor<f64>,
    w0: &Tensor<f64>,
    b0: &Tensor<f64>,
    w1: &Tensor<f64>,
    b1: &Tensor<f64>,
    with_max: bool,
) -> Vec<f64> {
    let (n, c, h, w) = dims4(f);
    let hidden = b0.numel();
    let x = f.data();
    let mlp = |p: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = b0.data()[j];
            for k in 0..c {
                acc += w0.data()[j * c + k] * p[k];
            }
            z[j] = acc.max(0.0);
        }
        (0..c)
            .map(|k| {
                let mut acc = b1.data()[k];
                for j in 0..hidden {
                    acc += w1.data()[k * hidden + j] * z[j];
                }
                acc
            })
            .collect()
    };
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let mut avg = vec![0.0; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for k in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x[((i * c + k) * h + y) * w + xx];
                    avg[k] += v;
                    max[k] = max[k].max(v);
                }
            }
            avg[k] /= (h * w) as f64;
        }
        let mut pre = mlp(&avg);
        if with_max {
            for (p, m) in pre.iter_mut().zip(mlp(&max)) {
                *p += m;
            }
        }
        out.extend(pre.into_iter().map(sigmoid));
    }
    out
}

/// `σ(conv7x7([mean_c; max_c]) + b)` with zero padding. Returns `[N * H * W]`.
pub fn spatial_attention(f: &Tensor<f64>, kernel: &Tensor<f64>, bias: f64) -> Vec<f64> {
    let (n, c, h, w) = dims4(f);
    let k = kernel.shape()[2];
    let pad = SPATIAL_PADDING as isize;
    let x = f.data();
    let mut out = Vec::with_capacity(n * h * w);
    for i in 0..n {
        let mut pooled = vec![[0.0f64; 2]; h * w];
        for (p, slot) in pooled.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = x[(i * c + ch) * h * w + p];
                sum += v;
                max = max.max(v);
            }
            *slot = [sum / c as f64, max];
        }
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = bias;
                for (ch, _) in ["mean", "max"].iter().enumerate() {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (iy, ix) = (y + ky - pad, xx + kx - pad);
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let weight = kernel.data()[(ch * k + ky as usize) * k + kx as usize];
                            acc += weight * pooled[iy as usize * w + ix as usize][ch];
                        }
                    }
                }
                out.push(sigmoid(acc));
            }
        }
    }
    out
}

/// Style pooling (mean, population deviation), channel-wise weights,
/// batch-statistics normalization and a sigmoid. Returns `[N * C]`.
pub fn style_attention(
    f: &Tensor<f64>,
    cfc_weight: &Tensor<f64>,
    cfc_bias: &Tensor<f64>,
    gamma: &Tensor<f64>,
    beta: &Tensor<f64>,
) -> Vec<f64> {
    let (n, c, h, w) = dims4(f);
    let hw = (h * w) as f64;
    let x = f.data();
    let mut z = vec![0.0; n * c];
    for i in 0..n {
        for k in 0..c {
            let plane = &x[(i * c + k) * h * w..(i * c + k + 1) * h * w];
            let mean = plane.iter().sum::<f64>() / hw;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw;
            let std = var.sqrt();
            z[i * c + k] = cfc_weight.data()[k * 2] * mean + cfc_weight.data()[k * 2 + 1] * std + cfc_bias.data()[k];
        }
    }
    let mut out = vec![0.0; n * c];
    for k in 0..c {
        let mu = (0..n).map(|i| z[i * c + k]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z[i * c + k] - mu).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            let y = gamma.data()[k] * (z[i * c + k] - mu) / (var + BN_EPS).sqrt() + beta.data()[k];
            out[i * c + k] = sigmoid(y);
        }
    }
    out
}

/// One scalar-state LSTM step over the input `[x ‖ a ‖ h]`. `weight` is
/// `[4, 2D + 1]` row-major in gate order input, forget, cell, output.
pub fn lstm_step(weight: &[f64], bias: &[f64], x: &[f64], a: &[f64], h: f64, c: f64) -> (f64, f64) {
    let cols = x.len() + a.len() + 1;
    let gate = |g: usize| {
        let row = &weight[g * cols..(g + 1) * cols];
        let mut acc = bias[g];
        for (j, v) in x.iter().chain(a).chain(std::iter::once(&h)).enumerate() {
            acc += row[j] * v;
        }
        acc
    };
    let i = sigmoid(gate(0));
    let f = sigmoid(gate(1));
    let g = gate(2).tanh();
    let o = sigmoid(gate(3));
    let c_next = f * c + i * g;
    (o * c_next.tanh(), c_next)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_abs_error: f64,
}

fn random(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares the graph actors against the loop references on `cases` random
/// inputs each (batch 2–4, C ≤ 8, H, W ≤ 6, random parameters).
pub fn check_actors(cases: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..cases {
        let (n, c) = (rng.gen_range(2..=4), rng.gen_range(1..=8));
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let f = random(&[n, c, h, w], 2.0, &mut rng);
        let hidden = rng.gen_range(1..=c);

        for (slot, pooling) in [(0, ChannelPooling::Average), (1, ChannelPooling::AverageAndMax)] {
            let mut store = ParamStore::new();
            let actor = ChannelActor::new(&mut store, "a", c, hidden, pooling, &mut rng);
            for id in [actor.w0, actor.b0, actor.w1, actor.b1] {
                let shape = store.get(id).shape().to_vec();
                store.set(id, random(&shape, 1.0, &mut rng))?;
            }
            let got = evaluate(&store, &[], NormMode::Batch, ActionKind::Channel, &f, |ctx, x| actor.act(ctx, x))?;
            let want = channel_attention(
                &f,
                store.get(actor.w0),
                store.get(actor.b0),
                store.get(actor.w1),
                store.get(actor.b1),
                pooling == ChannelPooling::AverageAndMax,
            );
            worst[slot] = worst[slot].max(max_diff(got.values.data(), &want));
        }

        let mut store = ParamStore::new();
        let actor = SpatialActor::new(&mut store, "s", &mut rng);
        store.set(actor.bias, random(&[1], 1.0, &mut rng))?;
        let got = evaluate(&store, &[], NormMode::Batch, ActionKind::Spatial, &f, |ctx, x| actor.act(ctx, x))?;
        let want = spatial_attention(&f, store.get(actor.kernel), store.get(actor.bias).data()[0]);
        worst[2] = worst[2].max(max_diff(got.values.data(), &want));

        let mut store = ParamStore::new();
        let mut running = Vec::new();
        let actor = StyleActor::new(&mut store, &mut running, "y", c);
        for id in [actor.cfc_weight, actor.cfc_bias, actor.bn.gamma, actor.bn.beta] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, random(&shape, 1.0, &mut rng))?;
        }
        let got = evaluate(&store, &running, NormMode::Batch, ActionKind::Style, &f, |ctx, x| actor.act(ctx, x))?;
        let want = style_attention(
            &f,
            store.get(actor.cfc_weight),
            store.get(actor.cfc_bias),
            store.get(actor.bn.gamma),
            store.get(actor.bn.beta),
        );
        worst[3] = worst[3].max(max_diff(got.values.data(), &want));
    }
    Ok(["channel", "cbam_channel", "spatial", "style"]
        .into_iter()
        .zip(worst)
        .map(|(name, max_abs_error)| OracleReport { name, cases, max_abs_error })
        .collect())
}

/// Compares one critic step against [`lstm_step`] on `cases` random
/// (dimension, parameters, input, state) draws.
pub fn check_critic(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, d) = (rng.gen_range(1..=4), rng.gen_range(1..=16));
        let mut store = ParamStore::new();
        let critic = Critic::new(&mut store, "c", d, ActionKind::Channel, &mut rng);
        store.set(critic.weight, random(&[4, 2 * d + 1], 1.0, &mut rng))?;
        store.set(critic.bias, random(&[4], 1.0, &mut rng))?;
        let x = random(&[n, d], 2.0, &mut rng);
        let a = Tensor::from_fn([n, d], |_| rng.gen_range(0.0..1.0));
        let h = random(&[n, 1], 1.0, &mut rng);
        let c = random(&[n, 1], 2.0, &mut rng);

        let graph = dreal_tensor::Graph::inference();
        let bound = store.bind(&graph);
        let state = CriticState { h: graph.constant(h.clone()), c: graph.constant(c.clone()) };
        let next = critic.step(&bound, graph.constant(x.clone()), graph.constant(a.clone()), state)?;
        for i in 0..n {
            let (want_h, want_c) = lstm_step(
                store.get(critic.weight).data(),
                store.get(critic.bias).data(),
                &x.data()[i * d..(i + 1) * d],
                &a.data()[i * d..(i + 1) * d],
                h.data()[i],
                c.data()[i],
            );
            worst = worst
                .max((next.h.value().data()[i] - want_h).abs())
                .max((next.c.value().data()[i] - want_c).abs());
        }
    }
    Ok(OracleReport { name: "critic", cases, max_abs_error: worst })
}

/// Two stages of two blocks on 4×4 inputs: the smallest network with
/// stage-shared critics over more than one block.
pub fn toy_config(kind: AttentionKind) -> NetworkConfig {
    NetworkConfig {
        stages: vec![
            StageSpec { num_blocks: 2, channels: 4, spatial_size: [4, 4], stride_in: 1 },
            StageSpec { num_blocks: 2, channels: 8, spatial_size: [2, 2], stride_in: 2 },
        ],
        num_classes: 3,
        attention_kind: kind,
        reduction_ratio: 2,
        input_shape: [4, 4, 3],
    }
}

/// Worst norm-relative error `|g - ĝ| / max(|g|, |ĝ|)` between analytic and
/// central-difference gradients, per objective and parameter group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub kind: AttentionKind,
    /// `∂L_q/∂θ`, critic states held at their unperturbed values.
    pub quality_actor: f64,
    /// `∂L_r/∂φ`
    pub regression_critic: f64,
    /// `∂L_c/∂θ`
    pub classification_actor: f64,
    /// `∂L_c/∂𝒲`
    pub classification_backbone: f64,
    pub checked_values: usize,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.quality_actor.max(self.regression_critic).max(self.classification_actor).max(self.classification_backbone)
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Scalar losses of one batch evaluated without gradient tracking. When
/// `states` is given, the critics read those block states instead of the
/// current ones.
fn loss_values(
    net: &Network<f64>,
    batch: &Batch<f64>,
    rewards: &[RewardRecord],
    states: Option<&BTreeMap<BlockId, Tensor<f64>>>,
) -> Result<[f64; 3]> {
    let graph = Graph::inference();
    let bound = net.params.bind(&graph);
    let stages: BTreeSet<usize> = net.stage_indices().into_iter().collect();
    let Some(states) = states else {
        let obj = objectives(net, &graph, &bound, batch, &stages, rewards)?;
        let v = |x: Option<Var<'_, f64>>| x.map_or(0.0, |x| x.value().item());
        return Ok([obj.l_c.value().item(), v(obj.l_q), v(obj.l_r)]);
    };
    let pass = net.forward(&graph, &bound, &batch.images, NormMode::Batch, &Default::default())?;
    let l_c = classification_loss(pass.logits, &batch.labels)?.value().item();
    let mut q_values: BTreeMap<BlockId, Vec<Var<'_, f64>>> = BTreeMap::new();
    for s in net.stage_indices() {
        let in_stage: Vec<_> = pass.traces.iter().filter(|t| t.id.stage == s).collect();
        for (k, critic) in net.critics(s).iter().enumerate() {
            let features: Vec<_> = in_stage.iter().map(|t| graph.constant(states[&t.id].clone())).collect();
            let actions: Vec<_> = in_stage.iter().map(|t| t.applied[k].1).collect();
            for (t, q) in in_stage.iter().zip(critic.rollout(&bound, &features, &actions)?) {
                q_values.entry(t.id).or_default().push(q);
            }
        }
    }
    let all: Vec<_> = q_values.values().flatten().copied().collect();
    let l_q = quality_loss(&all).map_or(0.0, |v| v.value().item());
    Ok([l_c, l_q, 0.0])
}

/// Central differences of loss `which` with respect to every element of `ids`.
fn numeric_gradient(
    net: &mut Network<f64>,
    ids: &[ParamId],
    which: usize,
    eval: &dyn Fn(&Network<f64>) -> Result<[f64; 3]>,
    step: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &id in ids {
        for i in 0..net.params.get(id).numel() {
            let orig = net.params.get(id).data()[i];
            net.params.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(net)?[which];
            net.params.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(net)?[which];
            net.params.get_mut(id).data_mut()[i] = orig;
            out.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(out)
}

/// Analytic versus central-difference gradients of all three losses on the
/// toy network, with random rewards for one block per stage.
pub fn gradient_check(kind: AttentionKind, seed: u64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = toy_config(kind);
    let mut net = build_network::<f64>(&cfg, &mut rng)?;
    // move actor parameters off their symmetric initial values
    for id in net.params.ids_in(ParamGroup::Actor).collect::<Vec<_>>() {
        let shape = net.params.get(id).shape().to_vec();
        let noise = random(&shape, 0.3, &mut rng);
        let moved = net.params.get(id).zip_map(&noise, |a, b| a + b)?;
        net.params.set(id, moved)?;
    }
    let n = 4;
    let [h, w, c] = cfg.input_shape;
    let batch = Batch { images: random(&[n, c, h, w], 1.0, &mut rng), labels: (0..n).map(|i| i % 3).collect() };
    let rewards: Vec<RewardRecord> = [BlockId::new(0, 1), BlockId::new(1, 0)]
        .into_iter()
        .map(|block| RewardRecord {
            block,
            rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            p_full: vec![0.0; n],
            p_bypassed: vec![0.0; n],
            correct: vec![true; n],
        })
        .collect();
    let stages: BTreeSet<usize> = net.stage_indices().into_iter().collect();
    let ids = |g: ParamGroup| net.params.ids_in(g).collect::<Vec<_>>();
    let (backbone, actor, critic) = (ids(ParamGroup::Backbone), ids(ParamGroup::Actor), ids(ParamGroup::Critic));

    let graph = Graph::new();
    let bound = net.params.bind(&graph);
    let obj = objectives(&net, &graph, &bound, &batch, &stages, &rewards)?;
    let states: BTreeMap<BlockId, Tensor<f64>> =
        obj.pass.traces.iter().map(|t| (t.id, t.feature.value().as_ref().clone())).collect();
    let flat = |grads: &dreal_tensor::Gradients<f64>, ids: &[ParamId]| -> Vec<f64> {
        ids.iter().flat_map(|id| grads.get_or_zeros(&bound[*id]).into_data()).collect()
    };
    let vars = |ids: &[ParamId]| ids.iter().map(|id| bound[*id]).collect::<Vec<_>>();
    let l_q = obj.l_q.expect("toy network has critics");
    let l_r = obj.l_r.expect("toy network has rewards");
    let q_actor = flat(&graph.backward(l_q, &vars(&actor))?, &actor);
    let r_critic = flat(&graph.backward(l_r, &vars(&critic))?, &critic);
    let g_c = graph.backward(obj.l_c, &vars(&[backbone.clone(), actor.clone()].concat()))?;
    let (c_actor, c_backbone) = (flat(&g_c, &actor), flat(&g_c, &backbone));
    drop(obj);
    drop(bound);

    let step = 1e-6;
    let fixed = |net: &Network<f64>| loss_values(net, &batch, &rewards, Some(&states));
    let free = |net: &Network<f64>| loss_values(net, &batch, &rewards, None);
    let num_q_actor = numeric_gradient(&mut net, &actor, 1, &fixed, step)?;
    let num_r_critic = numeric_gradient(&mut net, &critic, 2, &free, step)?;
    let num_c_actor = numeric_gradient(&mut net, &actor, 0, &free, step)?;
    let num_c_backbone = numeric_gradient(&mut net, &backbone, 0, &free, step)?;
    Ok(GradientReport {
        kind,
        quality_actor: relative_error(&q_actor, &num_q_actor),
        regression_critic: relative_error(&r_critic, &num_r_critic),
        classification_actor: relative_error(&c_actor, &num_c_actor),
        classification_backbone: relative_error(&c_backbone, &num_c_backbone),
        checked_values: num_q_actor.len() + num_r_critic.len() + num_c_actor.len() + num_c_backbone.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticFit {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains one critic alone on a frozen synthetic set of three-block
/// (state, action, reward) sequences. Rewards depend on both the action and
/// the state so the critic has to use both inputs.
pub fn critic_fit(steps: usize, seed: u64) -> Result<CriticFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, blocks) = (64, 8, 3);
    let mut store = ParamStore::<f64>::new();
    let critic = Critic::new(&mut store, "critic", d, ActionKind::Channel, &mut rng);
    let states: Vec<Tensor<f64>> = (0..blocks).map(|_| random(&[n, d, 2, 2], 1.0, &mut rng)).collect();
    let actions: Vec<Tensor<f64>> =
        (0..blocks).map(|_| Tensor::from_fn([n, d, 1, 1], |_| rng.gen_range(0.05..0.95))).collect();
    let rewards: Vec<Vec<f64>> = (0..blocks)
        .map(|b| {
            (0..n)
                .map(|i| {
                    let a = &actions[b].data()[i * d..(i + 1) * d];
                    let s = &states[b].data()[i * d * 4..(i + 1) * d * 4];
                    let spread = a.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / d as f64;
                    (2.0 * spread - 0.25 + 0.1 * s[0]).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();

    let mut sgd = crate::optim::Sgd::new(store.len(), 0.9);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let graph = Graph::new();
        let bound = store.bind(&graph);
        let features: Vec<_> = states.iter().map(|s| graph.constant(s.clone())).collect();
        let acts: Vec<_> = actions.iter().map(|a| graph.constant(a.clone())).collect();
        let qs = critic.rollout(&bound, &features, &acts)?;
        let pairs: Vec<_> = qs.iter().copied().zip(rewards.iter().map(Vec::as_slice)).collect();
        let loss = crate::trainer::regression_loss(&pairs)?.expect("non-empty");
        losses.push(loss.value().item());
        if step == steps {
            break;
        }
        let ids = [critic.weight, critic.bias];
        let grads = graph.backward(loss, &[bound[ids[0]], bound[ids[1]]])?;
        let grads: Vec<_> = ids.iter().map(|id| grads.get_or_zeros(&bound[*id])).collect();
        drop(bound);
        for (id, g) in ids.iter().zip(&grads) {
            sgd.step(&mut store, *id, g, 0.1, 0.0);
        }
    }
    Ok(CriticFit { steps, initial_loss: losses[0], final_loss: losses[steps] })
}
