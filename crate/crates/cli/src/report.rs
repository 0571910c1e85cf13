//! Static PNG figures drawn from the CSV exports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::commands::{GRADIENT_TRACE_FILE, KDE_GRID_FILE};
use crate::manifest::{self, require};
use crate::{CliError, RunConfig};

const CELL: u32 = 4;

/// Data rows of an export, skipping `#` header lines and the column line.
fn data_rows(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn num(s: &str, path: &Path) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Config(format!("{}: bad number `{s}`", path.display())))
}

/// Dark blue through yellow.
fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let c = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([c(20.0, 250.0), c(30.0, 230.0), c(90.0, 40.0)])
}

/// One heat map per task from a KDE grid export.
fn render_kde(path: &Path, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut tasks: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in data_rows(path)? {
        if r.len() != 4 {
            return Err(CliError::Config(format!("{}: expected 4 columns", path.display())));
        }
        tasks.entry(r[0].clone()).or_default().push((num(&r[1], path)?, num(&r[2], path)?, num(&r[3], path)?));
    }
    let mut out = Vec::new();
    for (task, cells) in tasks {
        let side = (cells.len() as f64).sqrt().round() as u32;
        if side * side != cells.len() as u32 || side == 0 {
            return Err(CliError::Config(format!("{}: {task} grid is not square", path.display())));
        }
        let peak = cells.iter().map(|c| c.2).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut img = RgbImage::new(side * CELL, side * CELL);
        for (k, c) in cells.iter().enumerate() {
            let (i, j) = (k as u32 / side, k as u32 % side);
            // Row i holds y ascending; images grow downwards.
            let y0 = (side - 1 - i) * CELL;
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(j * CELL + dx, y0 + dy, ramp(c.2 / peak));
                }
            }
        }
        let p = dir.join(format!("kde_{task}.png"));
        img.save(&p).map_err(|e| CliError::Core(gensr_core::Error::Io(std::io::Error::other(e))))?;
        out.push(p);
    }
    Ok(out)
}

/// Per-step cosine lines for each paradigm over a zero baseline.
fn render_trace(path: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in data_rows(path)? {
        if r.len() != 3 {
            return Err(CliError::Config(format!("{}: expected 3 columns", path.display())));
        }
        if r[2] != "undefined" {
            series.entry(r[1].clone()).or_default().push((num(&r[0], path)?, num(&r[2], path)?));
        }
    }
    let (w, h) = (800u32, 300u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let max_step = series.values().flatten().map(|p| p.0).fold(1.0, f64::max);
    let to_px = |s: f64, c: f64| ((s / max_step * (w - 1) as f64) as u32, (((1.0 - c) / 2.0) * (h - 1) as f64) as u32);
    for x in 0..w {
        img.put_pixel(x, (h - 1) / 2, Rgb([180, 180, 180]));
    }
    let colours = [Rgb([200, 40, 40]), Rgb([40, 70, 200]), Rgb([30, 150, 60])];
    for (k, pts) in series.values().enumerate() {
        let colour = colours[k % colours.len()];
        for win in pts.windows(2) {
            let (a, b) = (to_px(win[0].0, win[0].1), to_px(win[1].0, win[1].1));
            let n = a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)).max(1);
            for t in 0..=n {
                let f = t as f64 / n as f64;
                let x = a.0 as f64 + (b.0 as f64 - a.0 as f64) * f;
                let y = a.1 as f64 + (b.1 as f64 - a.1 as f64) * f;
                img.put_pixel(x as u32, y as u32, colour);
            }
        }
    }
    let p = dir.join("gradient_trace.png");
    img.save(&p).map_err(|e| CliError::Core(gensr_core::Error::Io(std::io::Error::other(e))))?;
    Ok(p)
}

pub fn render(cfg: &RunConfig) -> Result<(), CliError> {
    let paradigm = cfg.paradigm()?;
    let kde = cfg.out().join("analysis").join(format!("projection-{}", paradigm.name())).join(KDE_GRID_FILE);
    let trace = cfg.out().join("analysis").join("gradients").join(GRADIENT_TRACE_FILE);
    let present: Vec<&Path> = [kde.as_path(), trace.as_path()].into_iter().filter(|p| p.is_file()).collect();
    if present.is_empty() {
        // Names the first expected export.
        require(&[&kde])?;
    }
    let dir = cfg.out().join("report");
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    if kde.is_file() {
        outputs.extend(render_kde(&kde, &dir)?);
    }
    if trace.is_file() {
        outputs.push(render_trace(&trace, &dir)?);
    }
    let inputs: Vec<PathBuf> = present.iter().map(|p| p.to_path_buf()).collect();
    manifest::write(&dir, "report", cfg, &inputs, &outputs)
}
