use std::fs;

use dreal_harness::{load_config, Error, ExperimentConfig};

#[test]
fn minimal_file_gets_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "output_dir = \"out\"\n").unwrap();
    let cfg = load_config(&path, &[]).unwrap();
    assert_eq!(cfg.network.reduction_ratio, 16);
    assert_eq!(cfg.reward.gamma, 1.0);
    assert_eq!((cfg.train.lambda_q, cfg.train.lambda_r), (1.0, 1.0));
    assert_eq!(cfg.train.epochs, 60);
    assert_eq!(cfg.train.learning_rate.decay_epochs, vec![30, 45]);
    assert_eq!(cfg.network.stages.len(), 3);
    assert!(cfg.network.stages.iter().all(|s| s.num_blocks == 3));
}

#[test]
fn negative_gamma_is_rejected_by_name() {
    let err = ExperimentConfig::from_toml("[reward]\ngamma = -0.5\n", &[]).unwrap_err();
    assert!(matches!(err, Error::Core(_)), "{err}");
    assert!(err.to_string().contains("reward.gamma"), "{err}");
}

#[test]
fn stage_restriction() {
    let cfg = ExperimentConfig::from_toml("[train]\nenabled_stages = [2]\n", &[]).unwrap();
    assert_eq!(cfg.train.enabled_stages, Some(vec![2]));
    assert_eq!(cfg.train.stages(3).into_iter().collect::<Vec<_>>(), vec![2]);
    let err = ExperimentConfig::from_toml("[train]\nenabled_stages = [3]\n", &[]).unwrap_err();
    assert!(err.to_string().contains("enabled_stages"), "{err}");
}

#[test]
fn unknown_keys_are_errors() {
    for text in ["[train]\nlamda_q = 1.0\n", "colour = 1\n", "[network]\nstage = []\n"] {
        let err = ExperimentConfig::from_toml(text, &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{text}: {err}");
        assert!(err.to_string().contains("unknown field"), "{err}");
    }
}

#[test]
fn wrong_types_name_the_key() {
    let err = ExperimentConfig::from_toml("[train]\nbatch_size = \"big\"\n", &[]).unwrap_err();
    assert!(err.to_string().contains("batch_size"), "{err}");
}

#[test]
fn overrides_win_over_the_file() {
    let cfg = ExperimentConfig::from_toml(
        "[train]\nseed = 1\n",
        &["train.seed=7".into(), "reward.gamma=0.5".into(), "output_dir=elsewhere".into()],
    )
    .unwrap();
    assert_eq!(cfg.train.seed, 7);
    assert_eq!(cfg.reward.gamma, 0.5);
    assert_eq!(cfg.output_dir.to_str(), Some("elsewhere"));
}

#[test]
fn missing_file_names_the_path() {
    let err = load_config(std::path::Path::new("/nonexistent/c.toml"), &[]).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/c.toml"));
}
