//! `dreal` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::ablate::{ablate, format_table};
use crate::checkpoint::Checkpoint;
use crate::config::{load_config, ExperimentConfig, PlotConfig};
use crate::dataset::ingest_dataset;
use crate::error::Result;
use crate::metrics::{read_metrics, JsonlSink};
use crate::plots::emit_plots;
use crate::run::{read_snapshots, run_experiment, RunOptions, PLOT_DIR, SNAPSHOT_FILE};
use crate::selftest::run_selftest;
use dreal_core::trainer::accuracy;

#[derive(Debug, Parser)]
#[command(name = "dreal", about = "Reinforced attention training for residual classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file; trailing key=value pairs override config entries.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run with the same network.
        #[arg(long)]
        resume: Option<PathBuf>,
        overrides: Vec<String>,
    },
    /// Top-1 accuracy of a checkpoint on its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        overrides: Vec<String>,
    },
    /// Redraw plots from a metrics file.
    Plot {
        #[arg(long)]
        history: PathBuf,
        /// Attention snapshots; defaults to snapshots.json next to the history.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Defaults to a plots directory next to the history.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-block bypass reward report on the validation split.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the rows as JSON lines.
        #[arg(long)]
        output: Option<PathBuf>,
        overrides: Vec<String>,
    },
    /// Run the operator, critic, gradient and reward oracles.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn checkpoint_config(ckpt: &Checkpoint, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(ckpt.config.clone());
    }
    ExperimentConfig::from_toml(&ckpt.config.to_toml(), overrides)
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, resume, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let out = run_experiment(&cfg, &RunOptions { resume, stop_after: None })?;
            if let Some(last) = out.history.last() {
                println!(
                    "epoch {} train {:.4} val {}",
                    last.epoch,
                    last.train_accuracy,
                    last.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
            println!("metrics: {}", out.metrics_path().display());
            Ok(0)
        }
        Command::Eval { checkpoint, overrides } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = checkpoint_config(&ckpt, &overrides)?;
            let network = ckpt.network(&cfg)?;
            let splits = ingest_dataset(&cfg.dataset, &cfg.network)?;
            let batch = cfg.train.batch_size;
            let report = serde_json::json!({
                "epoch": ckpt.epoch,
                "train_accuracy": accuracy(&network, &splits.train, batch)?,
                "val_accuracy": accuracy(&network, &splits.val, batch)?,
            });
            println!("{report}");
            Ok(0)
        }
        Command::Plot { history, snapshots, out } => {
            let base = history.parent().unwrap_or(Path::new(".")).to_path_buf();
            let records = read_metrics(&history)?;
            let snap_path = snapshots.unwrap_or_else(|| base.join(SNAPSHOT_FILE));
            let snaps = if snap_path.exists() { read_snapshots(&snap_path)? } else { Vec::new() };
            let dir = out.unwrap_or_else(|| base.join(PLOT_DIR));
            let written = emit_plots(&records, &snaps, &dir, PlotConfig::default())?;
            if records.is_empty() {
                eprintln!("warning: {} holds no records, nothing plotted", history.display());
            } else {
                println!("wrote {} files to {}", written.len(), dir.display());
            }
            Ok(0)
        }
        Command::Ablate { checkpoint, output, overrides } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = checkpoint_config(&ckpt, &overrides)?;
            let network = ckpt.network(&cfg)?;
            let splits = ingest_dataset(&cfg.dataset, &cfg.network)?;
            let stages = cfg.train.stages(cfg.network.stages.len());
            let rows = ablate(&network, &splits.val, &stages, &cfg.reward, cfg.train.batch_size)?;
            print!("{}", format_table(&rows));
            if let Some(path) = output {
                let mut sink = JsonlSink::create(&path)?;
                for r in &rows {
                    sink.write(r)?;
                }
            }
            Ok(0)
        }
        Command::Selftest { seed } => {
            let checks = run_selftest(seed)?;
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}
