use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::aggregate::{case_values, metric_value, Metric};
use super::sweep::CellSummary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// R, G, B = worst, mean and best seed.
    #[default]
    MinMeanMax,
    /// R, G, B = seed-mean argmin, first and argmax case accuracies.
    CaseRgb,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_mean_max" => Ok(ChannelMode::MinMeanMax),
            "case_rgb" => Ok(ChannelMode::CaseRgb),
            _ => Err(Error::config(format!("unknown channel mode {s:?} (min_mean_max, case_rgb)"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::MinMeanMax => "min_mean_max",
            ChannelMode::CaseRgb => "case_rgb",
        })
    }
}

/// Layout of an accuracy grid: one pixel block per (lr, x) cell, learning
/// rates descending from the top row, x ascending to the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mode: ChannelMode,
    pub metric: Metric,
    /// Side length in pixels of each cell's block.
    pub upscale: usize,
    pub lrs: Vec<f64>,
    pub xs: Vec<usize>,
}

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Runtime(format!("png: {e}")))?;
            w.write_image_data(&self.rgb).map_err(|e| Error::Runtime(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

/// `round(255 * v)` with halves away from zero, `v` clamped to [0, 1].
pub fn channel_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Renders records of one architecture onto the grid described by `spec`.
/// Cells without a usable record are black.
pub fn render_grid(records: &[CellSummary], spec: &GridSpec) -> Result<Image> {
    if spec.lrs.is_empty() || spec.xs.is_empty() || spec.upscale == 0 {
        return Err(Error::config("grid needs at least one learning rate, one x value and upscale >= 1"));
    }
    let mut lrs = spec.lrs.clone();
    lrs.sort_by(|a, b| b.total_cmp(a));
    lrs.dedup();
    let mut xs = spec.xs.clone();
    xs.sort_unstable();
    xs.dedup();
    if lrs.len() != spec.lrs.len() || xs.len() != spec.xs.len() {
        return Err(Error::config("grid axes contain duplicates"));
    }
    if let Some(r) = records.iter().find(|r| r.cell.arch != records[0].cell.arch) {
        return Err(Error::config(format!("records mix architectures {} and {}", records[0].cell.arch, r.cell.arch)));
    }

    let mut cells: BTreeMap<(usize, usize), Vec<&CellSummary>> = BTreeMap::new();
    for r in records {
        let row = lrs.iter().position(|&l| l.to_bits() == r.cell.lr.to_bits());
        let col = xs.iter().position(|&x| x == r.cell.x);
        match (row, col) {
            (Some(row), Some(col)) => cells.entry((row, col)).or_default().push(r),
            _ => {
                return Err(Error::config(format!(
                    "record at x={} lr={:e} lies outside the {}x{} grid",
                    r.cell.x,
                    r.cell.lr,
                    lrs.len(),
                    xs.len()
                )))
            }
        }
    }

    let (cols, rows, k) = (xs.len(), lrs.len(), spec.upscale);
    let mut img = Image { width: cols * k, height: rows * k, rgb: vec![0; cols * k * rows * k * 3] };
    for ((row, col), recs) in cells {
        let Some(px) = cell_pixel(&recs, spec) else { continue };
        for y in row * k..(row + 1) * k {
            for x in col * k..(col + 1) * k {
                let i = (y * img.width + x) * 3;
                img.rgb[i..i + 3].copy_from_slice(&px);
            }
        }
    }
    Ok(img)
}

fn cell_pixel(recs: &[&CellSummary], spec: &GridSpec) -> Option<[u8; 3]> {
    match spec.mode {
        ChannelMode::MinMeanMax => {
            let v: Vec<f64> = recs.iter().filter_map(|r| metric_value(r, spec.metric)).collect();
            if v.is_empty() {
                return None;
            }
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            Some([channel_byte(min), channel_byte(mean), channel_byte(max)])
        }
        ChannelMode::CaseRgb => {
            let v: Vec<[f64; 3]> = recs.iter().filter_map(|r| case_values(r, spec.metric)).collect();
            if v.is_empty() {
                return None;
            }
            let mean = |i: usize| v.iter().map(|c| c[i]).sum::<f64>() / v.len() as f64;
            Some([channel_byte(mean(0)), channel_byte(mean(1)), channel_byte(mean(2))])
        }
    }
}
