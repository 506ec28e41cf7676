use dreal_core::backbone::{build_network, AttentionKind, NetworkConfig};
use dreal_core::critic::critic_param_count;
use dreal_core::{Network, ParamGroup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build(blocks: usize, kind: AttentionKind) -> Network<f32> {
    let cfg = NetworkConfig::desk(blocks, kind, 10, [16, 16, 3]);
    build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn actor_and_critic_counts() {
    for (kind, actors, critics) in [
        (AttentionKind::Channel, 9, 3),
        (AttentionKind::Style, 9, 3),
        (AttentionKind::SpatialChannel, 18, 6),
        (AttentionKind::None, 0, 0),
    ] {
        let net = build(3, kind);
        assert_eq!((net.num_actors(), net.num_critics()), (actors, critics), "{kind:?}");
        assert_eq!(net.params.count(ParamGroup::Actor) == 0, kind == AttentionKind::None);
    }
}

#[test]
fn groups_partition_the_parameters() {
    let net = build(2, AttentionKind::SpatialChannel);
    let total: usize = ParamGroup::ALL.iter().map(|g| net.params.count(*g)).sum();
    assert_eq!(total, net.params.total());
    let mut names: Vec<_> = net.params.entries().iter().map(|e| e.name.clone()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), net.params.len());
    for e in net.params.entries() {
        let expect = if e.name.contains("critic") {
            ParamGroup::Critic
        } else if e.name.contains("attention") {
            ParamGroup::Actor
        } else {
            ParamGroup::Backbone
        };
        assert_eq!(e.group, expect, "{}", e.name);
    }
}

#[test]
fn critic_budget() {
    for kind in [AttentionKind::Channel, AttentionKind::SpatialChannel, AttentionKind::Style] {
        let net = build(3, kind);
        let mut expected = 0;
        for s in 0..net.num_stages() {
            for critic in net.critics(s) {
                expected += critic_param_count(critic.dim);
            }
        }
        assert_eq!(net.params.count(ParamGroup::Critic), expected);
        let deeper = build(6, kind);
        assert_eq!(deeper.params.count(ParamGroup::Critic), expected, "{kind:?}");
        assert!(deeper.params.count(ParamGroup::Backbone) > net.params.count(ParamGroup::Backbone));
    }
    let net = build(3, AttentionKind::Channel);
    let dims: Vec<usize> = (0..3).map(|s| net.critics(s)[0].dim).collect();
    assert_eq!(dims, vec![16, 32, 64]);
    let ratio = net.params.count(ParamGroup::Critic) as f64 / net.params.count(ParamGroup::Backbone) as f64;
    assert!(ratio < 0.005, "{ratio}");
}

#[test]
fn invalid_configs_name_the_field() {
    let mut cfg = NetworkConfig::desk(2, AttentionKind::Channel, 10, [16, 16, 3]);
    cfg.reduction_ratio = 5;
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("reduction_ratio"), "{err}");
    let mut cfg = NetworkConfig::desk(2, AttentionKind::Channel, 10, [16, 16, 3]);
    cfg.stages[1].spatial_size = [16, 16];
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("spatial_size"), "{err}");
}
