//! Config to metrics, checkpoint, snapshots and plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dreal_core::trainer::Trainer;

use crate::checkpoint::{fresh_network, Checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::ingest_dataset;
use crate::error::{io, Result};
use crate::metrics::{log_metrics, JsonlSink, MetricRecord, TimingRecord};
use crate::plots::emit_plots;
use crate::snapshot::{snapshot_attention, AttentionSnapshot};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SNAPSHOT_FILE: &str = "snapshots.json";
pub const PLOT_DIR: &str = "plots";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of initializing afresh.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs even if `train.epochs` is larger.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub history: Vec<MetricRecord>,
    pub snapshots: Vec<AttentionSnapshot>,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn metrics_path(&self) -> PathBuf {
        self.output_dir.join(METRICS_FILE)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).map_err(io(&config_path))?;

    let splits = ingest_dataset(&cfg.dataset, &cfg.network)?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            log::info!("resuming from {} at epoch {}", path.display(), ckpt.epoch);
            ckpt.restore(cfg, splits.augmentation)?
        }
        None => Trainer::new(fresh_network(cfg)?, cfg.train.clone(), cfg.reward.clone(), splits.augmentation)?,
    };

    // Rewritten from the restored history so a resumed file equals an uninterrupted one.
    let mut metrics = JsonlSink::create(&dir.join(METRICS_FILE))?;
    for m in &trainer.history {
        log_metrics(&m.into(), &mut metrics)?;
    }
    let timing_path = dir.join(TIMING_FILE);
    let mut timing =
        if opts.resume.is_some() { JsonlSink::append(&timing_path)? } else { JsonlSink::create(&timing_path)? };

    let end = opts.stop_after.map_or(cfg.train.epochs, |s| s.min(cfg.train.epochs));
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    while trainer.epoch < end {
        let start = Instant::now();
        let m = trainer.run_epoch(&splits.train, Some(&splits.val))?;
        let record = MetricRecord::from(&m);
        log_metrics(&record, &mut metrics)?;
        timing.write(&TimingRecord { epoch: m.epoch, seconds: start.elapsed().as_secs_f64() })?;
        log::info!(
            "epoch {} lr {:.4} train {:.4} val {:.4} l_c {:.4} l_q {:.4} l_r {:.4}",
            m.epoch,
            m.learning_rate,
            m.train_accuracy,
            m.val_accuracy.unwrap_or(f64::NAN),
            m.l_c,
            m.l_q,
            m.l_r
        );
        if cfg.checkpoint_every > 0 && trainer.epoch % cfg.checkpoint_every == 0 {
            Checkpoint::capture(&trainer, cfg).save(&ckpt_path)?;
        }
    }
    Checkpoint::capture(&trainer, cfg).save(&ckpt_path)?;

    let stages = trainer.enabled_stages();
    let snapshots = snapshot_attention(&trainer.network, &splits.val, &stages, cfg.train.batch_size)?;
    write_snapshots(&dir.join(SNAPSHOT_FILE), &snapshots)?;
    let history: Vec<MetricRecord> = trainer.history.iter().map(MetricRecord::from).collect();
    emit_plots(&history, &snapshots, &dir.join(PLOT_DIR), cfg.plots)?;
    Ok(RunOutcome { history, snapshots, output_dir: dir })
}

pub fn write_snapshots(path: &Path, snapshots: &[AttentionSnapshot]) -> Result<()> {
    let text = serde_json::to_string_pretty(snapshots).expect("snapshots serialize");
    fs::write(path, text).map_err(io(path))
}

pub fn read_snapshots(path: &Path) -> Result<Vec<AttentionSnapshot>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text)
        .map_err(|e| crate::error::Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}
