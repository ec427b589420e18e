//! Two-step pupil localization and glint detection on near-eye images.
//!
//! The coarse step votes with a dark-polarity radial symmetry transform,
//! which both seeds the search and rejects blink frames. The refined step
//! runs Canny, keeps the edges in an annulus around the seed (minus the
//! glint blob), moves them to sub-pixel maxima and fits an ellipse.

pub mod canny;
pub mod ellipse;
pub mod frst;
pub mod glint;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use canny::{edge_extract, CannyConfig, EdgeMap, Gradients};
pub use ellipse::{fit_ellipse, fit_ellipse_trimmed, Conic, Ellipse};
pub use frst::{frst, FrstConfig, FrstResponse};
pub use glint::{detect_glint, refine_glint};

use crate::geom::Pixel;
use crate::raster::Grid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PupilError {
    #[error("image is empty")]
    EmptyImage,
    #[error("blink frame (peak symmetry response {peak:.3} below threshold {threshold:.3})")]
    Blink { peak: f64, threshold: f64 },
    #[error("hysteresis thresholds must satisfy 0 < low < high (got {low}, {high})")]
    BadThresholds { low: f64, high: f64 },
    #[error("ellipse fit needs at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("points do not determine an ellipse")]
    DegenerateConfiguration,
    #[error("no corneal reflection found")]
    NoGlint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseLocation {
    pub center: Pixel,
    /// Radius with the strongest individual response at `center`.
    pub radius: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coarse {
    Pupil(CoarseLocation),
    Blink { peak: f64 },
}

/// Peak of the dark radial-symmetry response, or `Blink` when the peak is
/// below `blink_threshold`.
pub fn coarse_locate(image: &Grid, cfg: &FrstConfig, blink_threshold: f64) -> Result<Coarse, PupilError> {
    Ok(coarse_from_response(&coarse_response(image, cfg)?, blink_threshold))
}

fn coarse_response(image: &Grid, cfg: &FrstConfig) -> Result<FrstResponse, PupilError> {
    if image.width == 0 || image.height == 0 {
        return Err(PupilError::EmptyImage);
    }
    Ok(frst(image, cfg))
}

fn coarse_from_response(resp: &FrstResponse, blink_threshold: f64) -> Coarse {
    let (center, peak) = resp.peak();
    if !(peak >= blink_threshold) || peak <= 0.0 {
        return Coarse::Blink { peak };
    }
    Coarse::Pupil(CoarseLocation { center, radius: resp.best_radius(center), response: peak })
}

/// Edge pixels whose distance from `coarse` lies in `[r_min, r_max]`.
pub fn filter_edges(edges: &EdgeMap, coarse: Pixel, band: (f64, f64)) -> Vec<Pixel> {
    let (r_min, r_max) = band;
    debug_assert!(r_min < r_max);
    edges
        .pixels()
        .filter(|p| {
            let d = p.dist(&coarse);
            d >= r_min && d <= r_max
        })
        .collect()
}

/// Full detector configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PupilConfig {
    pub frst: FrstConfig,
    pub canny: CannyConfig,
    /// Annulus around the coarse center, as multiples of the coarse radius.
    pub band: (f64, f64),
    /// Residual above which edge points are dropped before a single refit.
    pub trim_residual: Option<f64>,
    pub glint_threshold: f64,
    /// Extra clearance around the glint blob where edges are ignored.
    pub glint_margin: f64,
    pub subpixel: bool,
    /// After the first fit, edge pixels within this many px of the ellipse
    /// replace the annulus selection for a second fit.
    pub regrow: Option<f64>,
    /// Fraction of a nominal synthetic pupil's peak response below which a
    /// frame counts as a blink.
    pub blink_fraction: f64,
}

impl Default for PupilConfig {
    fn default() -> Self {
        Self {
            frst: FrstConfig::default(),
            canny: CannyConfig::default(),
            band: (0.5, 2.0),
            trim_residual: Some(2.0),
            glint_threshold: 240.0,
            glint_margin: 3.0,
            subpixel: true,
            regrow: Some(3.0),
            blink_fraction: 0.2,
        }
    }
}

/// Features measured on one near-eye image.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeFeatures {
    pub pupil: Ellipse,
    pub glint: Option<Pixel>,
    pub coarse: CoarseLocation,
    pub edge_points: usize,
}

/// Intermediate maps kept for debugging.
#[derive(Debug, Clone)]
pub struct DetectionDebug {
    pub response: FrstResponse,
    pub edges: Option<EdgeMap>,
}

#[derive(Debug, Clone)]
pub struct PupilDetector {
    cfg: PupilConfig,
    blink_threshold: f64,
}

impl PupilDetector {
    pub fn new(cfg: PupilConfig) -> Self {
        let blink_threshold = cfg.blink_fraction * nominal_response(&cfg.frst);
        Self { cfg, blink_threshold }
    }

    pub fn with_blink_threshold(cfg: PupilConfig, blink_threshold: f64) -> Self {
        Self { cfg, blink_threshold }
    }

    pub fn config(&self) -> &PupilConfig {
        &self.cfg
    }

    pub fn blink_threshold(&self) -> f64 {
        self.blink_threshold
    }

    pub fn detect(&self, image: &GrayImage) -> Result<EyeFeatures, PupilError> {
        self.detect_grid(&Grid::from_gray(image)).0
    }

    pub fn detect_with_debug(&self, image: &GrayImage) -> (Result<EyeFeatures, PupilError>, Option<DetectionDebug>) {
        self.detect_grid(&Grid::from_gray(image))
    }

    pub fn detect_grid(&self, img: &Grid) -> (Result<EyeFeatures, PupilError>, Option<DetectionDebug>) {
        let response = match coarse_response(img, &self.cfg.frst) {
            Ok(r) => r,
            Err(e) => return (Err(e), None),
        };
        let coarse = match coarse_from_response(&response, self.blink_threshold) {
            Coarse::Pupil(c) => c,
            Coarse::Blink { peak } => {
                let err = PupilError::Blink { peak, threshold: self.blink_threshold };
                return (Err(err), Some(DetectionDebug { response, edges: None }));
            }
        };

        let blob = glint::largest_blob(img, self.cfg.glint_threshold);
        let glint = blob.as_ref().map(|b| {
            let half = (b.radius * 2.0).ceil() as usize + 3;
            refine_glint(img, b.centroid, half)
        });

        let grads = Gradients::compute(img, self.cfg.canny.sigma);
        let edges = if self.cfg.canny.low > 0.0 && self.cfg.canny.low < self.cfg.canny.high {
            canny::edges_from_gradients(&grads, &self.cfg.canny)
        } else {
            let err = PupilError::BadThresholds { low: self.cfg.canny.low, high: self.cfg.canny.high };
            return (Err(err), Some(DetectionDebug { response, edges: None }));
        };

        let band = (self.cfg.band.0 * coarse.radius, self.cfg.band.1 * coarse.radius);
        let away_from_glint = |p: &Pixel| match &blob {
            Some(b) => p.dist(&b.centroid) > 2.0 * b.radius + self.cfg.glint_margin + 2.0 * self.cfg.canny.sigma,
            None => true,
        };
        let select = |points: Vec<Pixel>| -> Vec<Pixel> {
            let points = points.into_iter().filter(|p| away_from_glint(p));
            if self.cfg.subpixel {
                points.filter_map(|p| grads.refine(p)).collect()
            } else {
                points.collect()
            }
        };
        let fit = |points: &[Pixel]| match self.cfg.trim_residual {
            Some(r) => fit_ellipse_trimmed(points, r),
            None => fit_ellipse(points),
        };
        let mut points = select(filter_edges(&edges, coarse.center, band));
        let mut result = fit(&points);
        if let (Ok(first), Some(dist)) = (&result, self.cfg.regrow) {
            let conic = first.conic();
            let near = edges.pixels().filter(|p| conic.sampson_distance(p.u, p.v).abs() <= dist).collect();
            let grown = select(near);
            if let Ok(second) = fit(&grown) {
                points = grown;
                result = Ok(second);
            }
        }
        let result = result.map(|pupil| EyeFeatures { pupil, glint, coarse, edge_points: points.len() });
        (result, Some(DetectionDebug { response, edges: Some(edges) }))
    }
}

impl Default for PupilDetector {
    fn default() -> Self {
        Self::new(PupilConfig::default())
    }
}

/// Peak response of an anti-aliased dark disc (contrast 120, radius at the
/// middle of the configured range) on a uniform field.
pub fn nominal_response(cfg: &FrstConfig) -> f64 {
    let radius = (cfg.min_radius + cfg.max_radius) as f64 / 2.0;
    let size = (4.0 * radius).ceil() as usize + 16;
    let c = (size as f64 - 1.0) / 2.0;
    let mut g = Grid::filled(size, size, 160.0);
    const SUB: usize = 4;
    for y in 0..size {
        for x in 0..size {
            let mut inside = 0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let px = x as f64 - 0.5 + (sx as f64 + 0.5) / SUB as f64;
                    let py = y as f64 - 0.5 + (sy as f64 + 0.5) / SUB as f64;
                    if (px - c).hypot(py - c) <= radius {
                        inside += 1;
                    }
                }
            }
            g.add(x, y, -120.0 * inside as f64 / (SUB * SUB) as f64);
        }
    }
    frst(&g, cfg).peak().1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_edges_band() {
        let mut e = EdgeMap { width: 64, height: 64, edges: vec![false; 64 * 64] };
        let c = Pixel::new(32.0, 32.0);
        for (x, y) in [(47usize, 32usize), (32, 17), (17, 32)] {
            e.edges[y * 64 + x] = true;
        }
        assert_eq!(filter_edges(&e, c, (10.0, 20.0)).len(), 3);
        assert!(filter_edges(&e, c, (20.0, 30.0)).is_empty());
    }

    #[test]
    fn uniform_image_is_blink() {
        let g = Grid::filled(96, 96, 150.0);
        let det = PupilDetector::default();
        assert!(matches!(coarse_locate(&g, &det.cfg.frst, det.blink_threshold), Ok(Coarse::Blink { .. })));
        assert!(matches!(det.detect_grid(&g).0, Err(PupilError::Blink { .. })));
    }

    #[test]
    fn empty_image_errors() {
        let g = Grid::new(0, 0);
        assert_eq!(coarse_locate(&g, &FrstConfig::default(), 1.0), Err(PupilError::EmptyImage));
    }

    #[test]
    fn nominal_threshold_is_positive() {
        assert!(PupilDetector::default().blink_threshold() > 0.0);
    }
}
