//! Minimal deterministic PNG plots: grayscale heatmaps and line charts.
//! No text rendering; the CSV tables carry the numbers, these carry the
//! shapes.

use crate::errors::CliError;
use image::{GrayImage, Luma};
use ndarray::Array2;
use std::path::Path;

const MARGIN: u32 = 24;

fn save(path: &Path, img: GrayImage) -> Result<(), CliError> {
    img.save(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `field` as a grayscale heatmap, dark = minimum, 4x nearest-neighbor
/// upscaling for small grids.
pub fn heatmap(path: &Path, field: &Array2<f64>) -> Result<(), CliError> {
    let (nx, ny) = field.dim();
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let zoom = (512 / nx.max(ny).max(1)).clamp(1, 8) as u32;
    let mut img = GrayImage::new(nx as u32 * zoom, ny as u32 * zoom);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let v = field[[(x / zoom) as usize, (y / zoom) as usize]];
        *p = Luma([(255.0 * (v - lo) / span).round() as u8]);
    }
    save(path, img)
}

/// Draws one or more series on shared axes; each series gets its own gray
/// level, darkest first.
pub fn line_chart(path: &Path, series: &[&[f64]]) -> Result<(), CliError> {
    let (w, h) = (640u32, 400u32);
    let mut img = GrayImage::from_pixel(w, h, Luma([255]));
    let longest = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    if longest < 2 || finite.is_empty() {
        return save(path, img);
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    // Axes.
    for x in MARGIN..w - MARGIN {
        img.put_pixel(x, h - MARGIN, Luma([0]));
    }
    for y in MARGIN..=h - MARGIN {
        img.put_pixel(MARGIN, y, Luma([0]));
    }

    let plot_w = (w - 2 * MARGIN) as f64;
    let plot_h = (h - 2 * MARGIN) as f64;
    for (si, s) in series.iter().enumerate() {
        if s.len() < 2 {
            continue;
        }
        let shade = (si * 110 / series.len().max(1)) as u8;
        let pt = |i: usize| -> (f64, f64) {
            let x = MARGIN as f64 + plot_w * i as f64 / (s.len() - 1) as f64;
            let t = ((s[i] - lo) / span).clamp(0.0, 1.0);
            let y = (h - MARGIN) as f64 - plot_h * t;
            (x, y)
        };
        for i in 0..s.len() - 1 {
            if !s[i].is_finite() || !s[i + 1].is_finite() {
                continue;
            }
            let (x0, y0) = pt(i);
            let (x1, y1) = pt(i + 1);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let x = (x0 + t * (x1 - x0)).round() as u32;
                let y = (y0 + t * (y1 - y0)).round() as u32;
                if x < w && y < h {
                    img.put_pixel(x, y, Luma([shade]));
                }
            }
        }
    }
    save(path, img)
}
