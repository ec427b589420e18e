//! Float image grids and the separable filters the detectors share.

use image::{GrayImage, Luma};

/// Row-major `f64` image; pixel `(x, y)` is centered at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&p| p as f64).collect(),
        }
    }

    /// Rounds and clamps into an 8-bit image.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
        })
    }

    /// Linearly rescales `[min, max]` to `[0, 255]` for debug dumps.
    pub fn to_gray_normalized(&self) -> GrayImage {
        let (lo, hi) = self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([((self.get(x as usize, y as usize) - lo) / span * 255.0).round() as u8])
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    /// Clamped-border access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a sub-pixel position (clamped border).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Separable Gaussian blur with clamped borders. `sigma <= 0` copies.
    pub fn gaussian_blur(&self, sigma: f64) -> Grid {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let mut tmp = Grid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get_clamped(x as isize + k as isize - r, y as isize);
                }
                tmp.set(x, y, acc);
            }
        }
        let mut out = Grid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * tmp.get_clamped(x as isize, y as isize + k as isize - r);
                }
                out.set(x, y, acc);
            }
        }
        out
    }

    /// Sobel derivatives `(gx, gy)`, normalized so a unit ramp gives 1.
    pub fn sobel(&self) -> (Grid, Grid) {
        let mut gx = Grid::new(self.width, self.height);
        let mut gy = Grid::new(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let p = |dx: isize, dy: isize| self.get_clamped(x + dx, y + dy);
                let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                gx.set(x as usize, y as usize, dx / 8.0);
                gy.set(x as usize, y as usize, dy / 8.0);
            }
        }
        (gx, gy)
    }

    /// Block-average downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Grid {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Grid::new(w, h);
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += self.get(x * factor + dx, y * factor + dy);
                    }
                }
                out.set(x, y, acc * norm);
            }
        }
        out
    }
}

/// Normalized 1D Gaussian kernel truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
