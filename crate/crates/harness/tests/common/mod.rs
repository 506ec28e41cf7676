#![allow(dead_code)]

use std::path::Path;

use dreal_harness::ExperimentConfig;

/// Two-stage, one-block-per-stage network on 8x8 synthetic images.
pub fn tiny_toml(out: &Path) -> String {
    format!(
        r#"output_dir = "{}"

[network]
num_classes = 4
input_shape = [8, 8, 3]
reduction_ratio = 4
stages = [
  {{ num_blocks = 1, channels = 8, spatial_size = [8, 8], stride_in = 1 }},
  {{ num_blocks = 2, channels = 16, spatial_size = [4, 4], stride_in = 2 }},
]

[train]
epochs = 4
batch_size = 16
seed = 5

[train.learning_rate]
initial = 0.05
decay_epochs = [3]
factor = 0.1

[dataset.synthetic]
train_samples = 48
val_samples = 24
"#,
        out.display()
    )
}

pub fn tiny(out: &Path, overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml(&tiny_toml(out), &o).unwrap()
}
