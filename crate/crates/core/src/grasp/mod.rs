//! Oriented grasp rectangles, dense grasp maps and their decoding.

pub mod cornell;
pub mod metric;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

pub use cornell::{parse_cornell, Annotation};
pub use metric::{angle_difference, is_success, jaccard, polygon_area};

use crate::geom::Pixel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraspError {
    #[error("grasp maps are empty")]
    EmptyMaps,
    #[error("grasp maps have inconsistent sizes")]
    ShapeMismatch,
    #[error("rectangle centered at ({u:.1}, {v:.1}) is outside the {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("no ground-truth rectangles")]
    NoGroundTruth,
    #[error("malformed rectangle file: {0}")]
    MalformedFile(String),
    #[error("invalid rectangle: {0}")]
    InvalidRectangle(&'static str),
}

/// Wraps an angle into the gripper-symmetric range `[-π/2, π/2)`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can round up to exactly π
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

/// Antipodal grasp in image space. `theta` is the gripper closing direction
/// measured from the image x-axis; `width` is the opening along that
/// direction and `height` the finger extent across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRectangle {
    pub center: Pixel,
    pub theta: f64,
    pub width: f64,
    pub height: f64,
}

impl GraspRectangle {
    pub fn new(center: Pixel, theta: f64, width: f64, height: f64) -> Result<Self, GraspError> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(GraspError::InvalidRectangle("width and height must be positive"));
        }
        if !center.is_finite() || !theta.is_finite() {
            return Err(GraspError::InvalidRectangle("non-finite center or angle"));
        }
        Ok(Self { center, theta: wrap_half_turn(theta), width, height })
    }

    /// Corners in counter-clockwise order (in a y-up view; clockwise on screen),
    /// starting with the first gripper plate.
    pub fn corners(&self) -> [Pixel; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        // closing axis (c, s), finger axis (-s, c)
        let at = |a: f64, b: f64| Pixel::new(self.center.u + a * c - b * s, self.center.v + a * s + b * c);
        [at(-hw, -hh), at(hw, -hh), at(hw, hh), at(-hw, hh)]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Rectangle-local coordinates `(along closing axis, along fingers)`.
    pub fn local(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (u - self.center.u, v - self.center.v);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let (a, b) = self.local(u, v);
        a.abs() <= self.width / 2.0 && b.abs() <= self.height / 2.0
    }

    pub fn to_json(&self) -> RectangleJson {
        RectangleJson {
            center: [self.center.u, self.center.v],
            theta_deg: self.theta.to_degrees(),
            width: self.width,
            height: self.height,
        }
    }
}

/// Exchange form of a rectangle: center `[u, v]` in pixels, angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangleJson {
    pub center: [f64; 2],
    pub theta_deg: f64,
    pub width: f64,
    pub height: f64,
}

impl TryFrom<RectangleJson> for GraspRectangle {
    type Error = GraspError;
    fn try_from(j: RectangleJson) -> Result<Self, Self::Error> {
        GraspRectangle::new(Pixel::new(j.center[0], j.center[1]), j.theta_deg.to_radians(), j.width, j.height)
    }
}

/// Dense per-pixel grasp predictions, row-major `width`×`height`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspMaps {
    pub width: usize,
    pub height: usize,
    pub quality: Vec<f64>,
    pub cos2t: Vec<f64>,
    pub sin2t: Vec<f64>,
    pub grip_width: Vec<f64>,
}

impl GraspMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, quality: vec![0.0; n], cos2t: vec![0.0; n], sin2t: vec![0.0; n], grip_width: vec![0.0; n] }
    }

    pub fn validate(&self) -> Result<(), GraspError> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(GraspError::EmptyMaps);
        }
        if [self.quality.len(), self.cos2t.len(), self.sin2t.len(), self.grip_width.len()].iter().any(|&l| l != n) {
            return Err(GraspError::ShapeMismatch);
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Rectangle read out at pixel `idx` with the given finger height.
    pub fn grasp_at(&self, idx: usize, fixed_height: f64, formula: AngleFormula) -> GraspRectangle {
        let center = Pixel::new((idx % self.width) as f64, (idx / self.width) as f64);
        GraspRectangle {
            center,
            theta: formula.angle(self.cos2t[idx], self.sin2t[idx]),
            width: self.grip_width[idx],
            height: fixed_height,
        }
    }
}

/// How the angle is recovered from the `(cos 2θ, sin 2θ)` heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleFormula {
    /// `½·atan2(sin 2θ, cos 2θ)`, the inverse of the double-angle encoding.
    #[default]
    HalfAtan2,
    /// `½·atan(cos 2θ / sin 2θ)` taken literally; recovers `π/4 − θ` for
    /// encoded `θ` and exists only for comparison.
    PrintedRatio,
}

impl AngleFormula {
    pub fn angle(self, cos2t: f64, sin2t: f64) -> f64 {
        match self {
            AngleFormula::HalfAtan2 => wrap_half_turn(0.5 * sin2t.atan2(cos2t)),
            AngleFormula::PrintedRatio => wrap_half_turn(0.5 * (cos2t / sin2t).atan()),
        }
    }
}

/// Finger extent used when decoding; the heads carry no height.
pub const DEFAULT_FIXED_HEIGHT: f64 = 20.0;

/// Decoded grasp with a flag for maps whose best quality is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedGrasp {
    pub grasp: GraspRectangle,
    pub quality: f64,
    pub low_confidence: bool,
}

/// Grasp at the highest-quality pixel; ties go to the first pixel in
/// row-major order.
pub fn decode_grasp(maps: &GraspMaps, fixed_height: f64) -> Result<DecodedGrasp, GraspError> {
    decode_grasp_with(maps, fixed_height, AngleFormula::HalfAtan2)
}

pub fn decode_grasp_with(maps: &GraspMaps, fixed_height: f64, formula: AngleFormula) -> Result<DecodedGrasp, GraspError> {
    maps.validate()?;
    let idx = argmax_first(&maps.quality);
    let quality = maps.quality[idx];
    Ok(DecodedGrasp { grasp: maps.grasp_at(idx, fixed_height, formula), quality, low_confidence: !(quality > 0.0) })
}

/// Index of the largest value; the first one wins ties. NaN never wins.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// Quality assigned at the fringe of a rectangle's central band. It rises
/// linearly with Euclidean closeness to exactly 1 at the rectangle center, so
/// the peak sits on the pixel nearest the center.
pub const ENCODE_FRINGE_QUALITY: f64 = 0.99;

/// Rasterizes rectangles into target maps. Pixels within the central third
/// of the closing axis (and the full finger extent) receive the rectangle's
/// angle encoding and width; later rectangles overwrite earlier ones.
pub fn encode_truth(rects: &[GraspRectangle], size: (usize, usize)) -> Result<GraspMaps, GraspError> {
    let (w, h) = size;
    let mut maps = GraspMaps::zeros(w, h);
    for r in rects {
        if !r.center.in_bounds(w as u32, h as u32) {
            return Err(GraspError::OutOfBounds { u: r.center.u, v: r.center.v, width: w, height: h });
        }
        let (c2, s2) = ((2.0 * r.theta).cos(), (2.0 * r.theta).sin());
        let half_band = r.width / 6.0;
        let half_h = r.height / 2.0;
        let reach = half_band.hypot(half_h).ceil() as isize + 1;
        let (cu, cv) = (r.center.u.round() as isize, r.center.v.round() as isize);
        for y in (cv - reach).max(0)..=(cv + reach).min(h as isize - 1) {
            for x in (cu - reach).max(0)..=(cu + reach).min(w as isize - 1) {
                let (a, b) = r.local(x as f64, y as f64);
                if a.abs() > half_band || b.abs() > half_h {
                    continue;
                }
                let norm = (a.hypot(b) / half_band.max(half_h)).min(1.0);
                let i = y as usize * w + x as usize;
                maps.quality[i] = 1.0 - (1.0 - ENCODE_FRINGE_QUALITY) * norm;
                maps.cos2t[i] = c2;
                maps.sin2t[i] = s2;
                maps.grip_width[i] = r.width;
            }
        }
    }
    Ok(maps)
}
