//! Minimal raster charts. They carry no text; the CSV next to each plot holds
//! the numbers and the ordering.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, WHITE);
    for k in 0..=4 {
        let y = y_of(k as f64 / 4.0);
        for x in MARGIN..W - MARGIN / 2 {
            img.put_pixel(x, y, if k == 0 { AXIS } else { GRID });
        }
    }
    for y in MARGIN / 2..=y_of(0.0) {
        img.put_pixel(MARGIN, y, AXIS);
    }
    img
}

/// Pixel row of a value in [0, 1].
fn y_of(v: f64) -> u32 {
    let span = (H - MARGIN - MARGIN / 2) as f64;
    (H - MARGIN) - (v.clamp(0.0, 1.0) * span).round() as u32
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Grouped bars: `groups[i][j]` is bar `j` of group `i`, values in [0, 1].
pub fn bar_chart(groups: &[Vec<f64>], path: &Path) -> Result<()> {
    if groups.is_empty() || groups.iter().all(|g| g.is_empty()) {
        return Err(Error::Empty("bar chart data".into()));
    }
    let mut img = canvas();
    let per = groups.iter().map(Vec::len).max().unwrap_or(1) as u32;
    let slot = (W - MARGIN - MARGIN / 2) / groups.len() as u32;
    let bar = (slot * 3 / 4 / per).max(1);
    for (i, g) in groups.iter().enumerate() {
        let x0 = MARGIN + i as u32 * slot + slot / 8;
        for (j, &v) in g.iter().enumerate() {
            let c = Rgb(PALETTE[j % PALETTE.len()]);
            let left = x0 + j as u32 * bar;
            for x in left..left + bar.saturating_sub(1).max(1) {
                for y in y_of(v)..y_of(0.0) {
                    img.put_pixel(x, y, c);
                }
            }
        }
    }
    save(&img, path)
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (a.0 + t * (b.0 - a.0)).round() as i64;
        let y = (a.1 + t * (b.1 - a.1)).round() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as u32) < W && (py as u32) < H {
                    img.put_pixel(px as u32, py as u32, c);
                }
            }
        }
    }
}

/// One polyline per series over evenly spaced x positions, values in [0, 1].
pub fn line_chart(series: &[Vec<f64>], path: &Path) -> Result<()> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    if len == 0 {
        return Err(Error::Empty("line chart data".into()));
    }
    let mut img = canvas();
    let span = (W - MARGIN - MARGIN) as f64;
    let x_of = |i: usize| MARGIN as f64 + 10.0 + if len == 1 { 0.0 } else { i as f64 * (span - 20.0) / (len - 1) as f64 };
    for (k, s) in series.iter().enumerate() {
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f64, f64)> = s.iter().enumerate().map(|(i, &v)| (x_of(i), y_of(v) as f64)).collect();
        for w in pts.windows(2) {
            segment(&mut img, w[0], w[1], c);
        }
        for &p in &pts {
            segment(&mut img, (p.0 - 3.0, p.1), (p.0 + 3.0, p.1), c);
        }
    }
    save(&img, path)
}
