//! Static PNG figures: sweep curves, per-class score histograms and
//! reconstruction grids. Figures carry no text; the matching CSV files hold
//! the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::nn::Tensor;
use crate::{Error, Result};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
const RED: Rgb<u8> = Rgb([214, 39, 40]);

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: u32 = 32;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, WHITE);
    for i in 1..5 {
        let y = MARGIN + (H - 2 * MARGIN) * i / 5;
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, y, GRID);
        }
    }
    for x in MARGIN..=W - MARGIN {
        img.put_pixel(x, H - MARGIN, AXIS);
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, AXIS);
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0i64, 0i64), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < W && (py as u32) < H {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

fn dot(img: &mut RgbImage, (x, y): (f64, f64), color: Rgb<u8>) {
    for dy in -3i64..=3 {
        for dx in -3i64..=3 {
            if dx * dx + dy * dy <= 9 {
                let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
                if px >= 0 && py >= 0 && (px as u32) < W && (py as u32) < H {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }
}

/// Metric against parameter value. Points are spaced evenly in sweep order
/// (sweep values are often geometric); the y axis spans [0.5, 1] or the data
/// range, whichever is wider.
pub fn plot_sweep(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::arg("sweep plot needs at least one point"));
    }
    let mut img = canvas();
    let lo = points.iter().map(|p| p.1).fold(0.5, f64::min);
    let hi = points.iter().map(|p| p.1).fold(1.0, f64::max);
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |i: usize, v: f64| {
        let fx = if points.len() == 1 { 0.5 } else { i as f64 / (points.len() - 1) as f64 };
        (MARGIN as f64 + fx * pw, (H - MARGIN) as f64 - (v - lo) / (hi - lo) * ph)
    };
    for i in 1..points.len() {
        line(&mut img, to_px(i - 1, points[i - 1].1), to_px(i, points[i].1), BLUE);
    }
    for (i, p) in points.iter().enumerate() {
        dot(&mut img, to_px(i, p.1), BLUE);
    }
    save(&img, path)
}

/// Overlaid per-class histograms (normal blue, abnormal red) over the joint
/// score range.
pub fn plot_histograms(path: &Path, normal: &[f64], abnormal: &[f64], bins: usize) -> Result<()> {
    if bins == 0 || (normal.is_empty() && abnormal.is_empty()) {
        return Err(Error::arg("histogram needs scores and at least one bin"));
    }
    let all = normal.iter().chain(abnormal);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            c[(((x - lo) / span * bins as f64) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (cn, ca) = (count(normal), count(abnormal));
    let peak = cn.iter().chain(&ca).copied().max().unwrap_or(1).max(1) as f64;
    let mut img = canvas();
    let bw = (W - 2 * MARGIN) as f64 / bins as f64;
    let ph = (H - 2 * MARGIN) as f64;
    for b in 0..bins {
        let x0 = MARGIN as f64 + b as f64 * bw;
        for (counts, color, offset) in [(&cn, BLUE, 0.0), (&ca, RED, 0.5)] {
            let top = (H - MARGIN) as f64 - counts[b] as f64 / peak * ph;
            let xa = (x0 + offset * bw).round() as u32 + 1;
            let xb = (x0 + (offset + 0.5) * bw).round() as u32;
            for x in xa..xb.max(xa + 1).min(W - MARGIN) {
                for y in top.round() as u32..H - MARGIN {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    save(&img, path)
}

/// Rows of equally sized single-channel panels (first channel of each
/// tensor), values clamped to [0, 1], separated by 2 px white gutters.
pub fn recon_grid(path: &Path, rows: &[Vec<Tensor<f32>>]) -> Result<()> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::arg("reconstruction grid needs at least one panel"))?;
    let (ph, pw) = (first.height, first.width);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let gutter = 2;
    let width = (cols * (pw + gutter) + gutter) as u32;
    let height = (rows.len() * (ph + gutter) + gutter) as u32;
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            if panel.height != ph || panel.width != pw {
                return Err(Error::arg("grid panels differ in size"));
            }
            let plane = panel.channel(0);
            for y in 0..ph {
                for x in 0..pw {
                    let v = (plane[y * pw + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                    img.put_pixel(
                        (gutter + c * (pw + gutter) + x) as u32,
                        (gutter + r * (ph + gutter) + y) as u32,
                        Rgb([v, v, v]),
                    );
                }
            }
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figures_are_written() {
        let dir = tempfile::tempdir().unwrap();
        plot_sweep(&dir.path().join("s.png"), &[(1.0, 0.6), (8.0, 0.8), (128.0, 0.9)]).unwrap();
        plot_histograms(&dir.path().join("h.png"), &[0.1, 0.2, 0.2], &[0.7, 0.9], 10).unwrap();
        let t = Tensor::from_vec(1, 16, 16, vec![0.5f32; 256]);
        recon_grid(&dir.path().join("g.png"), &[vec![t.clone(), t.clone()], vec![t]]).unwrap();
        let g = image::open(dir.path().join("g.png")).unwrap();
        assert_eq!((g.width(), g.height()), (2 * 18 + 2, 2 * 18 + 2));
        assert!(plot_sweep(&dir.path().join("e.png"), &[]).is_err());
    }
}
