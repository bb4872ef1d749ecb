//! Minimal raster plots (axes, polylines, bars) written as PNG. The figures
//! carry no text; the CSV written next to each figure holds the numbers and
//! the legend order.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

const W: u32 = 640;
const H: u32 = 480;
const MARGIN: u32 = 40;

pub struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    /// White canvas with a framed plot area and a light 10×10 grid.
    pub fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let mut c = Self { img: RgbImage::from_pixel(W, H, Rgb([255, 255, 255])), x_range, y_range };
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let x = x_range.0 + t * (x_range.1 - x_range.0);
            let y = y_range.0 + t * (y_range.1 - y_range.0);
            let grey = [225, 225, 225];
            c.line((x, y_range.0), (x, y_range.1), grey);
            c.line((x_range.0, y), (x_range.1, y), grey);
        }
        let black = [0, 0, 0];
        c.line((x_range.0, y_range.0), (x_range.1, y_range.0), black);
        c.line((x_range.0, y_range.0), (x_range.0, y_range.1), black);
        c
    }

    fn px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (w, h) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
        let u = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        // CI bands may leave [0, 1]; they are drawn clipped to the frame.
        let v = ((y - self.y_range.0) / (self.y_range.1 - self.y_range.0)).clamp(0.0, 1.0);
        (MARGIN as f64 + u * w, (H - MARGIN) as f64 - v * h)
    }

    fn put(&mut self, x: f64, y: f64, color: [u8; 3]) {
        let (x, y) = (x.round(), y.round());
        if x >= 0.0 && y >= 0.0 && x < W as f64 && y < H as f64 {
            self.img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
        let (p, q) = (self.px(a), self.px(b));
        let steps = (q.0 - p.0).abs().max((q.1 - p.1).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.put(p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1), color);
        }
    }

    pub fn polyline(&mut self, xs: &[f64], ys: &[f64], color: [u8; 3], thick: bool) {
        for i in 1..xs.len().min(ys.len()) {
            self.line((xs[i - 1], ys[i - 1]), (xs[i], ys[i]), color);
            if thick {
                let dy = (self.y_range.1 - self.y_range.0) / (H - 2 * MARGIN) as f64;
                self.line((xs[i - 1], ys[i - 1] + dy), (xs[i], ys[i] + dy), color);
            }
        }
    }

    /// Axis-aligned filled rectangle in data coordinates.
    pub fn rect(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
        let (p, q) = (self.px((x0, y0)), self.px((x1, y1)));
        let (xa, xb) = (p.0.min(q.0).round() as i64, p.0.max(q.0).round() as i64);
        let (ya, yb) = (p.1.min(q.1).round() as i64, p.1.max(q.1).round() as i64);
        for y in ya..=yb {
            for x in xa..=xb {
                self.put(x as f64, y as f64, color);
            }
        }
    }

    pub fn marker(&mut self, at: (f64, f64), color: [u8; 3]) {
        let p = self.px(at);
        for dy in -3..=3 {
            for dx in -3..=3 {
                self.put(p.0 + dx as f64, p.1 + dy as f64, color);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path).with_context(|| format!("writing {}", path.display()))
    }
}

/// Lightened color for confidence bands.
pub fn pale(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| (v as u16 + 2 * 255).div_ceil(3) as u8)
}

/// Grayscale image from values in [0, 1], each cell scaled to a
/// `scale`×`scale` block.
pub fn gray_png(values: &ndarray::Array2<f64>, scale: u32, path: &Path) -> Result<()> {
    let (rows, cols) = values.dim();
    let img = image::GrayImage::from_fn(cols as u32 * scale, rows as u32 * scale, |x, y| {
        let v = values[[(y / scale) as usize, (x / scale) as usize]];
        image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
