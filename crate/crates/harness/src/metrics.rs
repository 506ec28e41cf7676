//! Line-delimited JSON metric records.
//!
//! Reals are stored as `f32` and written in their shortest round-trip
//! decimal form (at most 9 significant digits), so rereading a file
//! reproduces every value bit for bit. Wall-clock time goes to a separate
//! file so that two identical runs produce identical metric files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dreal_core::trainer::EpochMetrics;
use dreal_core::BlockId;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: BlockId,
    /// Mean critic value over the epoch.
    pub q: Option<f32>,
    /// Mean bypass reward; absent in epochs where the block was not bypassed.
    pub r: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_accuracy: f32,
    pub val_accuracy: Option<f32>,
    pub l_c: f32,
    pub l_q: f32,
    pub l_r: f32,
    /// Mean `|Q - R|` over the samples of bypassed blocks.
    pub qr_gap: Option<f32>,
    pub blocks: Vec<BlockRecord>,
}

impl From<&EpochMetrics> for MetricRecord {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            learning_rate: m.learning_rate as f32,
            train_accuracy: m.train_accuracy as f32,
            val_accuracy: m.val_accuracy.map(|v| v as f32),
            l_c: m.l_c as f32,
            l_q: m.l_q as f32,
            l_r: m.l_r as f32,
            qr_gap: m.qr_gap.map(|v| v as f32),
            blocks: m
                .blocks
                .iter()
                .map(|b| BlockRecord { block: b.block, q: b.mean_q.map(|v| v as f32), r: b.mean_r.map(|v| v as f32) })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub seconds: f64,
}

/// Appends one JSON object per line and flushes after each.
pub struct JsonlSink {
    path: PathBuf,
    file: File,
}

impl JsonlSink {
    /// Truncates any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(io(path))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn write<R: Serialize>(&mut self, record: &R) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).and_then(|_| self.file.flush()).map_err(io(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn log_metrics(record: &MetricRecord, sink: &mut JsonlSink) -> Result<()> {
    sink.write(record)
}

pub fn read_jsonl<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    read_jsonl(path)
}

/// Whole-file byte comparison, for determinism checks.
pub fn same_contents(a: &Path, b: &Path) -> Result<bool> {
    Ok(fs::read(a).map_err(io(a))? == fs::read(b).map_err(io(b))?)
}
