//! Raster plots with CSV sidecars.
//!
//! Attention plots show the per-element mean with a band of three
//! variances on either side; critic plots show mean Q (blue) and mean R
//! (red, only in epochs where the block was bypassed) against the epoch.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::config::PlotConfig;
use crate::error::{io, Error, Result};
use crate::metrics::MetricRecord;
use crate::snapshot::AttentionSnapshot;
use dreal_core::BlockId;

const WIDTH: u32 = 480;
const HEIGHT: u32 = 240;
const MARGIN: u32 = 20;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const BLUE: Rgb<u8> = Rgb([31, 90, 180]);
const BAND: Rgb<u8> = Rgb([190, 210, 240]);
const RED: Rgb<u8> = Rgb([200, 40, 40]);

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), ys: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = ys.filter(|v| v.is_finite()).fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
        if lo > hi {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        let x = if x.1 > x.0 { x } else { (x.0 - 0.5, x.0 + 0.5) };
        Self { x, y: (lo - pad, hi + pad) }
    }

    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let fx = (x - self.x.0) / (self.x.1 - self.x.0);
        let fy = (y - self.y.0) / (self.y.1 - self.y.0);
        ((MARGIN as f64 + fx * w).round() as i64, (MARGIN as f64 + (1.0 - fy) * h).round() as i64)
    }
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, WHITE);
    let (l, r, t, b) = (MARGIN as i64, (WIDTH - MARGIN) as i64, MARGIN as i64, (HEIGHT - MARGIN) as i64);
    line(&mut img, (l, b), (r, b), AXIS);
    line(&mut img, (l, t), (l, b), AXIS);
    img
}

fn put(img: &mut RgbImage, (x, y): (i64, i64), c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, (x, y), c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn marker(img: &mut RgbImage, (x, y): (i64, i64), c: Rgb<u8>) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, (x + dx, y + dy), c);
        }
    }
}

fn polyline(img: &mut RgbImage, pts: &[(i64, i64)], c: Rgb<u8>) {
    for w in pts.windows(2) {
        line(img, w[0], w[1], c);
    }
    if let [p] = pts {
        marker(img, *p, c);
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Parse { path: path.to_path_buf(), message: format!("writing png: {e}") })
}

pub fn attention_stem(s: &AttentionSnapshot) -> String {
    format!("attention_{}_{}", s.block, serde_json::to_value(s.kind).expect("kind").as_str().expect("unit variant"))
}

pub fn critic_stem(block: BlockId) -> String {
    format!("critic_{block}")
}

fn draw_attention(s: &AttentionSnapshot) -> RgbImage {
    let n = s.mean.len();
    let lower: Vec<f64> = s.mean.iter().zip(&s.variance).map(|(m, v)| m - 3.0 * v).collect();
    let upper: Vec<f64> = s.mean.iter().zip(&s.variance).map(|(m, v)| m + 3.0 * v).collect();
    let frame = Frame::new((0.0, n.saturating_sub(1) as f64), lower.iter().chain(&upper).copied());
    let mut img = canvas();
    for i in 0..n {
        let (x, top) = frame.px(i as f64, upper[i]);
        let (_, bottom) = frame.px(i as f64, lower[i]);
        line(&mut img, (x, top), (x, bottom), BAND);
        if i + 1 < n {
            // fill between neighbouring columns
            let (x2, top2) = frame.px((i + 1) as f64, upper[i + 1]);
            let (_, bottom2) = frame.px((i + 1) as f64, lower[i + 1]);
            for xx in x..x2 {
                let t = (xx - x) as f64 / (x2 - x).max(1) as f64;
                let lerp = |a: i64, b: i64| (a as f64 + t * (b - a) as f64).round() as i64;
                line(&mut img, (xx, lerp(top, top2)), (xx, lerp(bottom, bottom2)), BAND);
            }
        }
    }
    let pts: Vec<_> = s.mean.iter().enumerate().map(|(i, &m)| frame.px(i as f64, m)).collect();
    polyline(&mut img, &pts, BLUE);
    img
}

fn draw_critic(rows: &[CriticRow]) -> RgbImage {
    let first = rows.first().map_or(0.0, |r| r.epoch as f64);
    let last = rows.last().map_or(0.0, |r| r.epoch as f64);
    let values = rows.iter().flat_map(|r| [r.q, r.r]).flatten().map(|v| v as f64);
    let frame = Frame::new((first, last), values);
    let mut img = canvas();
    let q: Vec<_> = rows.iter().filter_map(|r| r.q.map(|v| frame.px(r.epoch as f64, v as f64))).collect();
    let r: Vec<_> = rows.iter().filter_map(|r| r.r.map(|v| frame.px(r.epoch as f64, v as f64))).collect();
    polyline(&mut img, &q, BLUE);
    polyline(&mut img, &r, RED);
    for p in r {
        marker(&mut img, p, RED);
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticRow {
    pub epoch: usize,
    pub q: Option<f32>,
    pub r: Option<f32>,
}

/// Q and R rows of one block across the history.
pub fn critic_rows(history: &[MetricRecord], block: BlockId) -> Vec<CriticRow> {
    history
        .iter()
        .filter_map(|rec| {
            rec.blocks.iter().find(|b| b.block == block).map(|b| CriticRow { epoch: rec.epoch, q: b.q, r: b.r })
        })
        .collect()
}

fn opt(v: Option<f32>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

/// Writes the plots and sidecars and returns every file written. An empty
/// history writes nothing.
pub fn emit_plots(
    history: &[MetricRecord],
    snapshots: &[AttentionSnapshot],
    dir: &Path,
    cfg: PlotConfig,
) -> Result<Vec<PathBuf>> {
    if history.is_empty() {
        log::warn!("empty metric history, no plots written");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    if cfg.attention {
        for s in snapshots {
            let stem = attention_stem(s);
            let mut csv = String::from("index,mean,variance\n");
            for (i, (m, v)) in s.mean.iter().zip(&s.variance).enumerate() {
                csv.push_str(&format!("{i},{m},{v}\n"));
            }
            let (png, side) = (dir.join(format!("{stem}.png")), dir.join(format!("{stem}.csv")));
            save(&draw_attention(s), &png)?;
            write_text(&side, &csv)?;
            written.extend([png, side]);
        }
    }
    if cfg.critic {
        let mut blocks: Vec<BlockId> = history.iter().flat_map(|r| r.blocks.iter().map(|b| b.block)).collect();
        blocks.sort();
        blocks.dedup();
        for block in blocks {
            let rows = critic_rows(history, block);
            let mut csv = String::from("epoch,q,r\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{}\n", r.epoch, opt(r.q), opt(r.r)));
            }
            let stem = critic_stem(block);
            let (png, side) = (dir.join(format!("{stem}.png")), dir.join(format!("{stem}.csv")));
            save(&draw_critic(&rows), &png)?;
            write_text(&side, &csv)?;
            written.extend([png, side]);
        }
    }
    Ok(written)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    Ok(text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn parse<V: std::str::FromStr>(path: &Path, s: &str) -> Result<V> {
    s.parse().map_err(|_| Error::Parse { path: path.to_path_buf(), message: format!("bad number `{s}`") })
}

/// `(mean, variance)` columns of an attention sidecar.
pub fn read_attention_sidecar(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for row in read_rows(path)? {
        if row.len() != 3 {
            return Err(Error::Parse { path: path.to_path_buf(), message: "expected 3 columns".into() });
        }
        mean.push(parse(path, &row[1])?);
        var.push(parse(path, &row[2])?);
    }
    Ok((mean, var))
}

pub fn read_critic_sidecar(path: &Path) -> Result<Vec<CriticRow>> {
    read_rows(path)?
        .into_iter()
        .map(|row| {
            if row.len() != 3 {
                return Err(Error::Parse { path: path.to_path_buf(), message: "expected 3 columns".into() });
            }
            let cell = |s: &str| if s.is_empty() { Ok(None) } else { parse(path, s).map(Some) };
            Ok(CriticRow { epoch: parse(path, &row[0])?, q: cell(&row[1])?, r: cell(&row[2])? })
        })
        .collect()
}
