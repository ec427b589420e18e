//! Gaze and grasp-heatmap fusion, the full per-frame pipeline and its
//! timing harness.

pub mod bench;
pub mod detector;
pub mod pipeline;

use serde::{Deserialize, Serialize};

use crate::geom::Pixel;
use crate::grasp::{argmax_first, AngleFormula, GraspError, GraspMaps, GraspRectangle, DEFAULT_FIXED_HEIGHT};

pub use bench::{run_bench, BenchConfig, BenchReport, StageStats};
pub use detector::{DetectError, GraspDetector, NetworkDetector, ScriptedDetector};
pub use pipeline::{run_pipeline, PipelineError, PipelineOutput, SelectionTracker, Stage, StageTimings};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FuseError {
    #[error("gaze ({u:.1}, {v:.1}) is outside the {width}x{height} map")]
    GazeOutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("invalid fusion config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Grasp(#[from] GraspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Width of the Gaussian gaze window in pixels.
    pub sigma_g: f64,
    /// Quality at the selected pixel needed for a confident selection.
    pub min_quality: f64,
    pub fixed_height: f64,
    pub angle_formula: AngleFormula,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { sigma_g: 30.0, min_quality: 0.2, fixed_height: DEFAULT_FIXED_HEIGHT, angle_formula: AngleFormula::HalfAtan2 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FuseError> {
        if !(self.sigma_g > 0.0) || !self.sigma_g.is_finite() {
            return Err(FuseError::InvalidConfig("sigma_g must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_quality) {
            return Err(FuseError::InvalidConfig("min_quality must lie in [0, 1]"));
        }
        if !(self.fixed_height > 0.0) {
            return Err(FuseError::InvalidConfig("fixed_height must be positive"));
        }
        Ok(())
    }
}

/// The grasp chosen for the current gaze.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub grasp: GraspRectangle,
    /// Gaze-weighted quality at the chosen pixel.
    pub score: f64,
    pub gaze: Pixel,
    pub confident: bool,
}

/// Wire form of a [`Selection`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionJson {
    pub center: [f64; 2],
    pub theta_deg: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
    pub confident: bool,
    pub gaze: [f64; 2],
}

impl Selection {
    pub fn to_json(&self) -> SelectionJson {
        SelectionJson {
            center: [self.grasp.center.u, self.grasp.center.v],
            theta_deg: self.grasp.theta.to_degrees(),
            width: self.grasp.width,
            height: self.grasp.height,
            score: self.score,
            confident: self.confident,
            gaze: [self.gaze.u, self.gaze.v],
        }
    }
}

/// Gaze weighting `q(u,v)·exp(-|(u,v) - g|² / 2σ²)` over the whole map.
pub fn weighted_quality(maps: &GraspMaps, gaze: Pixel, sigma_g: f64) -> Vec<f64> {
    let k = 1.0 / (2.0 * sigma_g * sigma_g);
    let wx: Vec<f64> = (0..maps.width).map(|x| (-(x as f64 - gaze.u).powi(2) * k).exp()).collect();
    let mut out = Vec::with_capacity(maps.quality.len());
    for y in 0..maps.height {
        let wy = (-(y as f64 - gaze.v).powi(2) * k).exp();
        let row = &maps.quality[y * maps.width..(y + 1) * maps.width];
        out.extend(row.iter().zip(&wx).map(|(q, w)| q * w * wy));
    }
    out
}

/// Picks the grasp at the maximum of the gaze-weighted quality map.
pub fn gaze_filter(maps: &GraspMaps, gaze: Pixel, cfg: &FusionConfig) -> Result<Selection, FuseError> {
    cfg.validate()?;
    maps.validate()?;
    if !gaze.in_bounds(maps.width as u32, maps.height as u32) {
        return Err(FuseError::GazeOutOfBounds { u: gaze.u, v: gaze.v, width: maps.width, height: maps.height });
    }
    let weighted = weighted_quality(maps, gaze, cfg.sigma_g);
    let idx = argmax_first(&weighted);
    let mut grasp = maps.grasp_at(idx, cfg.fixed_height, cfg.angle_formula);
    // a zero-width readout is not a valid rectangle; keep it drawable
    grasp.width = grasp.width.max(1.0);
    Ok(Selection { grasp, score: weighted[idx].max(0.0), gaze, confident: maps.quality[idx] >= cfg.min_quality })
}
