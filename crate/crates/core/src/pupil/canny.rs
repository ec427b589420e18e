//! Canny edge detection with optional sub-pixel refinement.

use serde::{Deserialize, Serialize};

use super::PupilError;
use crate::geom::Pixel;
use crate::raster::Grid;

/// Sobel responses are reported in raw kernel units (8× the per-pixel slope),
/// the scale the usual 8-bit hysteresis thresholds are quoted in.
const SOBEL_GAIN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self { sigma: 1.4, low: 20.0, high: 60.0 }
    }
}

/// Binary edge grid with the dimensions of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(i, _)| Pixel::new((i % self.width) as f64, (i / self.width) as f64))
    }

    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.is_edge(x as usize, y as usize) { 255 } else { 0 }])
        })
    }
}

/// Smoothed image and its gradient field.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub smoothed: Grid,
    pub gx: Grid,
    pub gy: Grid,
    pub magnitude: Grid,
}

impl Gradients {
    pub fn compute(image: &Grid, sigma: f64) -> Self {
        let smoothed = image.gaussian_blur(sigma);
        let (mut gx, mut gy) = smoothed.sobel();
        gx.data.iter_mut().for_each(|v| *v *= SOBEL_GAIN);
        gy.data.iter_mut().for_each(|v| *v *= SOBEL_GAIN);
        let mut magnitude = Grid::new(image.width, image.height);
        for (m, (a, b)) in magnitude.data.iter_mut().zip(gx.data.iter().zip(&gy.data)) {
            *m = a.hypot(*b);
        }
        Self { smoothed, gx, gy, magnitude }
    }

    /// Moves an edge pixel to the parabolic maximum of the gradient magnitude
    /// along its gradient direction. Offsets beyond one pixel are rejected.
    pub fn refine(&self, p: Pixel) -> Option<Pixel> {
        let (x, y) = (p.u as usize, p.v as usize);
        let (gx, gy) = (self.gx.get(x, y), self.gy.get(x, y));
        let m = gx.hypot(gy);
        if m == 0.0 {
            return None;
        }
        let (dx, dy) = (gx / m, gy / m);
        let before = self.magnitude.sample(p.u - dx, p.v - dy);
        let here = self.magnitude.get(x, y);
        let after = self.magnitude.sample(p.u + dx, p.v + dy);
        let denom = before - 2.0 * here + after;
        if denom >= 0.0 {
            return None;
        }
        let t = 0.5 * (before - after) / denom;
        (t.abs() <= 1.0).then(|| Pixel::new(p.u + t * dx, p.v + t * dy))
    }
}

pub fn edge_extract(image: &Grid, cfg: &CannyConfig) -> Result<EdgeMap, PupilError> {
    if !(cfg.low > 0.0 && cfg.low < cfg.high) {
        return Err(PupilError::BadThresholds { low: cfg.low, high: cfg.high });
    }
    Ok(edges_from_gradients(&Gradients::compute(image, cfg.sigma), cfg))
}

pub fn edges_from_gradients(g: &Gradients, cfg: &CannyConfig) -> EdgeMap {
    let (w, h) = (g.magnitude.width, g.magnitude.height);
    let mag = &g.magnitude;
    let mut thin = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let m = mag.get(x, y);
            if m < cfg.low {
                continue;
            }
            let (ox, oy) = sector_offset(g.gx.get(x, y), g.gy.get(x, y));
            let behind = mag.get((x as isize - ox) as usize, (y as isize - oy) as usize);
            let ahead = mag.get((x as isize + ox) as usize, (y as isize + oy) as usize);
            // strict on one side, non-strict on the other: plateaus yield one pixel
            if m > behind && m >= ahead {
                thin[y * w + x] = if m >= cfg.high { 2 } else { 1 };
            }
        }
    }
    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] == 2).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] == 1 {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap { width: w, height: h, edges }
}

/// Neighbor step along the gradient, quantized to 45°.
fn sector_offset(gx: f64, gy: f64) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}
