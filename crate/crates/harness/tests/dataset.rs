use std::fs;

use dreal_core::data::Augmentation;
use dreal_harness::dataset::{ingest_dataset, DatasetConfig, DatasetName};
use dreal_harness::{Error, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic(k: usize, n: usize) -> ExperimentConfig {
    let text = format!(
        "[network]\nnum_classes = {k}\ninput_shape = [8, 8, 3]\n[dataset.synthetic]\ntrain_samples = {n}\nval_samples = 40\n"
    );
    ExperimentConfig::from_toml(&text, &[]).unwrap()
}

#[test]
fn synthetic_is_class_balanced() {
    let cfg = synthetic(4, 256);
    let s = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    assert_eq!(s.train.len(), 256);
    assert_eq!(s.train.images.shape(), &[256, 3, 8, 8]);
    assert_eq!(s.train.class_counts(4), vec![64; 4]);
    assert_eq!(s.val.len(), 40);
    assert!(s.train.images.all_finite());
}

#[test]
fn generation_is_seeded() {
    let cfg = synthetic(4, 64);
    let a = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    let b = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.dataset.clone();
    other.synthetic.seed = 1;
    let c = ingest_dataset(&other, &cfg.network).unwrap();
    assert_ne!(a.train.images, c.train.images);
    // train and val are independent draws
    assert_ne!(a.train.images.data()[..192], a.val.images.data()[..192]);
}

#[test]
fn augmentation_off_makes_train_pipeline_identity() {
    let cfg = ExperimentConfig::from_toml(
        "[network]\ninput_shape = [8, 8, 3]\n[dataset.augmentation]\ncrop_padding = 0\nhorizontal_flip = false\n",
        &[],
    )
    .unwrap();
    let s = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    assert!(s.augmentation.is_identity());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(s.augmentation.apply(&s.train.images, &mut rng), s.train.images);
    // with augmentation on, the same call changes some images
    let on = Augmentation::default().apply(&s.train.images, &mut rng);
    assert_ne!(on, s.train.images);
}

#[test]
fn limits_truncate_splits() {
    let mut cfg = synthetic(4, 100);
    cfg.dataset.train_limit = Some(10);
    cfg.dataset.val_limit = Some(3);
    let s = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (10, 3));
}

fn cifar_config(root: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        network: dreal_core::NetworkConfig::desk(1, dreal_core::AttentionKind::Channel, 10, [32, 32, 3]),
        dataset: DatasetConfig {
            name: DatasetName::Cifar10,
            root: Some(root.to_path_buf()),
            normalize: false,
            ..DatasetConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn missing_cifar_gives_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cifar_config(&dir.path().join("absent"));
    let err = ingest_dataset(&cfg.dataset, &cfg.network).unwrap_err();
    assert!(matches!(err, Error::MissingData { .. }), "{err}");
    assert!(err.to_string().contains("cifar-10-binary"), "{err}");
}

#[test]
fn cifar_binary_records_decode() {
    let dir = tempfile::tempdir().unwrap();
    let record = |label: u8, fill: u8| {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, 3072));
        r
    };
    for i in 1..=5 {
        fs::write(dir.path().join(format!("data_batch_{i}.bin")), [record(i, 255), record(0, 0)].concat()).unwrap();
    }
    fs::write(dir.path().join("test_batch.bin"), record(9, 51)).unwrap();
    let cfg = cifar_config(dir.path());
    let s = ingest_dataset(&cfg.dataset, &cfg.network).unwrap();
    assert_eq!(s.train.len(), 10);
    assert_eq!(s.train.labels[..4], [1, 0, 2, 0]);
    assert!(s.train.images.data()[..3072].iter().all(|&v| v == 1.0));
    assert_eq!(s.val.labels, vec![9]);
    assert!(s.val.images.data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

    fs::write(dir.path().join("test_batch.bin"), [1u8, 2, 3]).unwrap();
    assert!(matches!(ingest_dataset(&cfg.dataset, &cfg.network), Err(Error::Parse { .. })));
}

#[test]
fn cifar_requires_matching_network() {
    let cfg = ExperimentConfig {
        dataset: DatasetConfig { name: DatasetName::Cifar10, root: Some("/tmp".into()), ..DatasetConfig::default() },
        ..ExperimentConfig::default()
    };
    let err = cfg.validate().unwrap_err();
    assert!(err.to_string().contains("input_shape"), "{err}");
}
