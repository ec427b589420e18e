//! Dark-polarity fast radial symmetry transform (Loy & Zelinsky).

use serde::{Deserialize, Serialize};

use crate::geom::Pixel;
use crate::raster::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrstConfig {
    pub min_radius: usize,
    pub max_radius: usize,
    pub stride: usize,
    /// Radial strictness exponent.
    pub alpha: f64,
    /// Gradients weaker than this fraction of the image maximum do not vote.
    pub gradient_fraction: f64,
    /// Integer block-averaging applied before voting; radii are divided by it.
    pub downsample: usize,
}

impl Default for FrstConfig {
    fn default() -> Self {
        Self { min_radius: 6, max_radius: 30, stride: 2, alpha: 2.0, gradient_fraction: 0.1, downsample: 1 }
    }
}

impl FrstConfig {
    pub fn radii(&self) -> Vec<usize> {
        (self.min_radius..=self.max_radius).step_by(self.stride.max(1)).collect()
    }
}

/// Summed response plus the per-radius smoothed maps.
#[derive(Debug, Clone)]
pub struct FrstResponse {
    pub total: Grid,
    pub per_radius: Vec<(usize, Grid)>,
    /// Scale between response-grid pixels and input pixels.
    pub scale: usize,
}

impl FrstResponse {
    /// Location and value of the strongest response (first in row-major order
    /// on ties), in input-image pixels.
    pub fn peak(&self) -> (Pixel, f64) {
        let (idx, val) = self
            .total
            .data
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        let (x, y) = (idx % self.total.width, idx / self.total.width);
        (self.to_input(x, y), val)
    }

    fn to_input(&self, x: usize, y: usize) -> Pixel {
        let s = self.scale as f64;
        let off = (s - 1.0) / 2.0;
        Pixel::new(x as f64 * s + off, y as f64 * s + off)
    }

    /// Radius (input pixels) whose individual response is largest at `at`.
    pub fn best_radius(&self, at: Pixel) -> f64 {
        let s = self.scale as f64;
        let off = (s - 1.0) / 2.0;
        let x = (((at.u - off) / s).round().max(0.0) as usize).min(self.total.width - 1);
        let y = (((at.v - off) / s).round().max(0.0) as usize).min(self.total.height - 1);
        self.per_radius
            .iter()
            .max_by(|a, b| a.1.get(x, y).total_cmp(&b.1.get(x, y)))
            .map(|(r, _)| (*r * self.scale) as f64)
            .unwrap_or(0.0)
    }
}

pub fn frst(image: &Grid, cfg: &FrstConfig) -> FrstResponse {
    let scale = cfg.downsample.max(1);
    let img = image.downsample(scale);
    let mut radii: Vec<usize> = cfg.radii().iter().map(|&r| ((r as f64 / scale as f64).round() as usize).max(1)).collect();
    radii.dedup();

    let (gx, gy) = img.sobel();
    let mag: Vec<f64> = gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect();
    let max_mag = mag.iter().copied().fold(0.0, f64::max);
    let threshold = cfg.gradient_fraction * max_mag;
    let (w, h) = (img.width, img.height);

    let mut total = Grid::new(w, h);
    let mut per_radius = Vec::with_capacity(radii.len());
    for &n in &radii {
        let mut orient = Grid::new(w, h);
        let mut magn = Grid::new(w, h);
        if max_mag > 0.0 {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let m = mag[i];
                    if m <= threshold || m == 0.0 {
                        continue;
                    }
                    // gradient points from dark to bright; a dark center lies against it
                    let tx = x as f64 - (gx.data[i] / m * n as f64).round();
                    let ty = y as f64 - (gy.data[i] / m * n as f64).round();
                    if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                        continue;
                    }
                    orient.add(tx as usize, ty as usize, 1.0);
                    magn.add(tx as usize, ty as usize, m);
                }
            }
        }
        let k = if n == 1 { 9.9 } else { 8.0 };
        let mut f = Grid::new(w, h);
        for i in 0..w * h {
            let o = orient.data[i].min(k) / k;
            f.data[i] = magn.data[i] / k * o.powf(cfg.alpha);
        }
        let s = f.gaussian_blur(0.25 * n as f64);
        for (t, v) in total.data.iter_mut().zip(&s.data) {
            *t += v;
        }
        per_radius.push((n, s));
    }
    let norm = 1.0 / radii.len().max(1) as f64;
    total.data.iter_mut().for_each(|v| *v *= norm);
    FrstResponse { total, per_radius, scale }
}
