use std::collections::BTreeSet;

use dreal_core::backbone::{build_network, AttentionKind, BlockId, Network, NetworkConfig, Overrides};
use dreal_core::critic::Critic;
use dreal_core::data::{Augmentation, Batch, LabeledImages};
use dreal_core::layers::NormMode;
use dreal_core::oracle::{critic_fit, toy_config};
use dreal_core::reward::RewardConfig;
use dreal_core::trainer::{objectives, Method, TrainConfig, Trainer};
use dreal_core::{Error, ParamGroup};
use dreal_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn snapshot(net: &Network<f64>, group: ParamGroup) -> Vec<Tensor<f64>> {
    net.params.ids_in(group).map(|id| net.params.get(id).clone()).collect()
}

fn toy_batch(n: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch { images: Tensor::from_fn([n, 3, 4, 4], |_| rng.gen_range(-1.0..1.0)), labels: (0..n).map(|i| i % 3).collect() }
}

fn trainer(kind: AttentionKind, config: TrainConfig) -> Trainer<f64> {
    let net = build_network(&toy_config(kind), &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
    Trainer::new(net, config, RewardConfig::default(), Augmentation::none()).unwrap()
}

/// Blob in one of four quadrants; the quadrant is the label.
fn quadrants(n: usize, seed: u64) -> LabeledImages<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let mut data = vec![0f32; n * 3 * 8 * 8];
    for (i, &l) in labels.iter().enumerate() {
        let (cy, cx) = (2 + 4 * (l / 2), 2 + 4 * (l % 2));
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let d2 = (y as f32 - cy as f32).powi(2) + (x as f32 - cx as f32).powi(2);
                    data[((i * 3 + c) * 8 + y) * 8 + x] = (-d2 / 3.0).exp() + rng.gen_range(-0.3..0.3);
                }
            }
        }
    }
    LabeledImages::new(Tensor::from_vec([n, 3, 8, 8], data).unwrap(), labels).unwrap()
}

#[test]
fn zero_quality_weight_reproduces_supervised_training() {
    let base = TrainConfig { lambda_q: 0.0, seed: 4, ..Default::default() };
    let mut reinforced = trainer(AttentionKind::Channel, base.clone());
    let mut supervised = trainer(AttentionKind::Channel, TrainConfig { method: Method::Supervised, ..base });
    for step in 0..3 {
        let batch = toy_batch(6, step);
        let a = reinforced.train_step(&batch).unwrap();
        let b = supervised.train_step(&batch).unwrap();
        assert_eq!(a.l_c, b.l_c);
        assert!(!a.rewards.is_empty());
    }
    for group in [ParamGroup::Backbone, ParamGroup::Actor] {
        assert_eq!(snapshot(&reinforced.network, group), snapshot(&supervised.network, group), "{group:?}");
    }
    assert_eq!(reinforced.network.running, supervised.network.running);
}

#[test]
fn zero_regression_weight_freezes_critics() {
    let mut t = trainer(AttentionKind::SpatialChannel, TrainConfig { lambda_r: 0.0, ..Default::default() });
    let before = snapshot(&t.network, ParamGroup::Critic);
    let bundle = t.train_step(&toy_batch(5, 0)).unwrap();
    assert!(bundle.l_r > 0.0);
    assert_eq!(snapshot(&t.network, ParamGroup::Critic), before);
    assert_ne!(snapshot(&t.network, ParamGroup::Actor), snapshot(&trainer(AttentionKind::SpatialChannel, TrainConfig::default()).network, ParamGroup::Actor));
}

#[test]
fn regression_loss_reaches_only_scheduled_stage_critics() {
    let t = trainer(AttentionKind::Channel, TrainConfig::default());
    let batch = toy_batch(4, 1);
    let net = &t.network;
    let graph = Graph::new();
    let bound = net.params.bind(&graph);
    let stages: BTreeSet<usize> = [0, 1].into();
    let rewards = vec![dreal_core::reward::RewardRecord {
        block: BlockId::new(0, 0),
        rewards: vec![0.5, -1.0, 0.2, 0.0],
        p_full: vec![0.0; 4],
        p_bypassed: vec![0.0; 4],
        correct: vec![true; 4],
    }];
    let obj = objectives(net, &graph, &bound, &batch, &stages, &rewards).unwrap();
    let critics: Vec<_> = net.params.ids_in(ParamGroup::Critic).map(|id| bound[id]).collect();
    let grads = graph.backward(obj.l_r.unwrap(), &critics).unwrap();
    // only stage 0 has a reward
    assert!(grads.get(&bound[net.critics(0)[0].weight]).is_some());
    assert!(grads.get(&bound[net.critics(1)[0].weight]).is_none());
}

#[test]
fn critic_states_are_detached() {
    let mut store = dreal_core::ParamStore::<f64>::new();
    let critic = Critic::new(&mut store, "c", 3, dreal_core::actors::ActionKind::Channel, &mut ChaCha8Rng::seed_from_u64(0));
    let graph = Graph::new();
    let bound = store.bind(&graph);
    let feature = graph.leaf(Tensor::from_fn([2, 3, 2, 2], |i| i as f64 * 0.1));
    let action = graph.leaf(Tensor::full([2, 3, 1, 1], 0.4));
    let qs = critic.rollout(&bound, &[feature, feature], &[action, action]).unwrap();
    let loss = qs[1].sum_all();
    let grads = graph.backward(loss, &[feature, action]).unwrap();
    assert!(grads.get(&feature).is_none());
    assert!(grads.get(&action).unwrap().max_abs() > 0.0);
}

#[test]
fn critic_carries_state_across_blocks() {
    let mut store = dreal_core::ParamStore::<f64>::new();
    let critic = Critic::new(&mut store, "c", 2, dreal_core::actors::ActionKind::Channel, &mut ChaCha8Rng::seed_from_u64(1));
    let graph = Graph::inference();
    let bound = store.bind(&graph);
    let f = graph.constant(Tensor::full([1, 2, 1, 1], 0.3));
    let low = graph.constant(Tensor::full([1, 2, 1, 1], 0.1));
    let high = graph.constant(Tensor::full([1, 2, 1, 1], 0.9));
    let a = critic.rollout(&bound, &[f, f], &[low, low]).unwrap();
    let b = critic.rollout(&bound, &[f, f], &[high, low]).unwrap();
    // same second input, different history
    assert_ne!(a[1].value().item(), b[1].value().item());
}

#[test]
fn critic_learns_frozen_rewards() {
    let fit = critic_fit(200, 3).unwrap();
    assert!(fit.final_loss <= 0.5 * fit.initial_loss, "{fit:?}");
}

#[test]
fn small_quality_step_does_not_lower_q() {
    let t = trainer(AttentionKind::Channel, TrainConfig::default());
    let mut net = t.network;
    let batch = toy_batch(8, 2);
    let stages: BTreeSet<usize> = [0, 1].into();
    let mean_q = |net: &Network<f64>| {
        let graph = Graph::inference();
        let bound = net.params.bind(&graph);
        let obj = objectives(net, &graph, &bound, &batch, &stages, &[]).unwrap();
        -obj.l_q.unwrap().value().item()
    };
    let before = mean_q(&net);
    let grads: Vec<_> = {
        let graph = Graph::new();
        let bound = net.params.bind(&graph);
        let obj = objectives(&net, &graph, &bound, &batch, &stages, &[]).unwrap();
        let theta: Vec<_> = net.params.ids_in(ParamGroup::Actor).collect();
        let g = graph.backward(obj.l_q.unwrap(), &theta.iter().map(|id| bound[*id]).collect::<Vec<_>>()).unwrap();
        theta.iter().map(|id| (*id, g.get_or_zeros(&bound[*id]))).collect()
    };
    for (id, g) in grads {
        let moved = net.params.get(id).zip_map(&g, |p, d| p - 1e-4 * d).unwrap();
        net.params.set(id, moved).unwrap();
    }
    let after = mean_q(&net);
    assert!(after >= before, "{before} -> {after}");
}

#[test]
fn stage_gating_limits_critics_and_rewards() {
    let mut t = trainer(AttentionKind::Channel, TrainConfig { enabled_stages: Some(vec![1]), ..Default::default() });
    let stage0 = [t.network.critics(0)[0].weight, t.network.critics(0)[0].bias];
    let before: Vec<_> = stage0.iter().map(|id| t.network.params.get(*id).clone()).collect();
    let bundle = t.train_step(&toy_batch(4, 3)).unwrap();
    assert!(bundle.q_values.keys().all(|id| id.stage == 1));
    assert_eq!(bundle.q_values.len(), 2);
    assert!(bundle.rewards.iter().all(|r| r.block.stage == 1));
    let after: Vec<_> = stage0.iter().map(|id| t.network.params.get(*id).clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn attention_free_network_trains_as_classifier() {
    let mut t = trainer(AttentionKind::None, TrainConfig::default());
    let bundle = t.train_step(&toy_batch(4, 4)).unwrap();
    assert_eq!((bundle.l_q, bundle.l_r), (0.0, 0.0));
    assert!(bundle.q_values.is_empty() && bundle.rewards.is_empty());
    assert!(bundle.l_c > 0.0);
}

#[test]
fn non_finite_loss_is_reported() {
    let mut t = trainer(AttentionKind::Channel, TrainConfig::default());
    let id = t.network.params.ids_in(ParamGroup::Backbone).next().unwrap();
    t.network.params.get_mut(id).data_mut()[0] = f64::NAN;
    match t.train_step(&toy_batch(4, 5)) {
        Err(Error::NonFinite { loss, .. }) => assert_eq!(loss, "l_c"),
        other => panic!("expected a non-finite error, got {:?}", other.map(|b| b.l_c)),
    }
}

#[test]
fn one_epoch_one_row_and_repeatable() {
    let run = || {
        let cfg = NetworkConfig::desk(1, AttentionKind::Channel, 4, [8, 8, 3]);
        let net = build_network::<f32>(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let train_cfg = TrainConfig { epochs: 1, batch_size: 16, seed: 9, ..Default::default() };
        let mut t = Trainer::new(net, train_cfg, RewardConfig::default(), Augmentation::default()).unwrap();
        let data = quadrants(64, 1);
        t.train(&data, Some(&data)).unwrap().to_vec()
    };
    let a = run();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].blocks.len(), 3);
    assert!(a[0].blocks.iter().all(|b| b.mean_q.is_some()));
    assert_eq!(a[0].blocks.iter().filter(|b| b.mean_r.is_some()).count(), 3);
    assert_eq!(a, run());
}

#[test]
fn separable_data_is_learned() {
    let cfg = NetworkConfig::desk(1, AttentionKind::Channel, 4, [8, 8, 3]);
    let net = build_network::<f32>(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let lr = dreal_core::optim::LrSchedule { decay_epochs: vec![20, 25], ..Default::default() };
    let train_cfg = TrainConfig { epochs: 30, batch_size: 32, learning_rate: lr, seed: 2, ..Default::default() };
    let mut t = Trainer::new(net, train_cfg, RewardConfig::default(), Augmentation::none()).unwrap();
    let data = quadrants(256, 7);
    let history = t.train(&data, None).unwrap();
    let last = history.last().unwrap();
    assert!(last.train_accuracy > 0.95, "{last:?}");
    let (pred, _) = t.network.predict(&data.images, NormMode::Running, &Overrides::new()).unwrap();
    let acc = pred.argmax().iter().zip(&data.labels).filter(|(a, b)| a == b).count() as f64 / 256.0;
    assert!(acc > 0.95, "{acc}");
}
