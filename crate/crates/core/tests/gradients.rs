use dreal_core::oracle::gradient_check;
use dreal_core::AttentionKind;

fn check(kind: AttentionKind) {
    let report = gradient_check(kind, 21).unwrap();
    println!("{report:?}");
    assert!(report.quality_actor <= 1e-4, "{report:?}");
    assert!(report.regression_critic <= 1e-4, "{report:?}");
    assert!(report.classification_actor <= 1e-4, "{report:?}");
    assert!(report.classification_backbone <= 1e-4, "{report:?}");
}

#[test]
fn channel_network_gradients() {
    check(AttentionKind::Channel);
}

#[test]
fn spatial_channel_network_gradients() {
    check(AttentionKind::SpatialChannel);
}

#[test]
fn style_network_gradients() {
    check(AttentionKind::Style);
}
