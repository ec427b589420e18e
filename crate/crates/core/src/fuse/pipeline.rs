//! One frame through the whole chain: near-eye capture, pupil and glint
//! detection, gaze estimation, grasp detection and gaze fusion.

use std::time::Instant;

use image::GrayImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detector::{DetectError, GraspDetector};
use super::{gaze_filter, FuseError, FusionConfig, Selection};
use crate::eyesim::{render_eye_image, NearEyeObservation, Rig, SceneFrame};
use crate::gaze::{estimate_gaze, gaze_to_scene, observation_from_features, GazeError, GazeEstimate};
use crate::grasp::GraspMaps;
use crate::pupil::{EyeFeatures, PupilDetector, PupilError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ImageAcquisition,
    ImagePreprocessing,
    GazePointEstimation,
    GraspDetection,
    Total,
}

impl Stage {
    pub const ALL: [Stage; 5] =
        [Stage::ImageAcquisition, Stage::ImagePreprocessing, Stage::GazePointEstimation, Stage::GraspDetection, Stage::Total];

    pub fn label(self) -> &'static str {
        match self {
            Stage::ImageAcquisition => "Image Acquisition",
            Stage::ImagePreprocessing => "Image Preprocessing",
            Stage::GazePointEstimation => "Gaze Point Estimation",
            Stage::GraspDetection => "Grasp Detection",
            Stage::Total => "Total",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Wall time per stage in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub image_acquisition: f64,
    pub image_preprocessing: f64,
    pub gaze_point_estimation: f64,
    pub grasp_detection: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn get(&self, stage: Stage) -> f64 {
        match stage {
            Stage::ImageAcquisition => self.image_acquisition,
            Stage::ImagePreprocessing => self.image_preprocessing,
            Stage::GazePointEstimation => self.gaze_point_estimation,
            Stage::GraspDetection => self.grasp_detection,
            Stage::Total => self.total,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("image preprocessing (eye camera {camera}): {source}")]
    Preprocessing { camera: usize, source: PupilError },
    #[error("gaze point estimation: {0}")]
    Gaze(#[from] GazeError),
    #[error("grasp detection: {0}")]
    Detection(#[from] DetectError),
    #[error("grasp detection: {0}")]
    Fusion(#[from] FuseError),
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Preprocessing { .. } => Stage::ImagePreprocessing,
            PipelineError::Gaze(_) => Stage::GazePointEstimation,
            PipelineError::Detection(_) | PipelineError::Fusion(_) => Stage::GraspDetection,
        }
    }

    pub fn is_blink(&self) -> bool {
        matches!(self, PipelineError::Gaze(GazeError::BlinkFrame))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub selection: Selection,
    pub gaze: GazeEstimate,
    pub features: [EyeFeatures; 2],
    pub maps: GraspMaps,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs one frame. Eye images are rendered from `eye_obs` with the rig's
/// sensor noise; a pupil detector reporting a blink on either camera ends
/// the frame with `GazeError::BlinkFrame`.
pub fn run_pipeline(
    scene: &SceneFrame,
    eye_obs: &[NearEyeObservation; 2],
    rig: &Rig,
    pupil: &PupilDetector,
    detector: &dyn GraspDetector,
    fusion: &FusionConfig,
    rng: &mut impl Rng,
) -> Result<PipelineOutput, PipelineError> {
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let images: [GrayImage; 2] =
        [0, 1].map(|k| render_eye_image(&eye_obs[k], rig.eye_image_size, rig.eye_noise, &rig.render, rng));
    timings.image_acquisition = ms(t);

    let t = Instant::now();
    let mut features = Vec::with_capacity(2);
    for (camera, img) in images.iter().enumerate() {
        match pupil.detect(img) {
            Ok(f) => features.push(f),
            Err(PupilError::Blink { .. } | PupilError::NoGlint) => return Err(GazeError::BlinkFrame.into()),
            Err(source) => return Err(PipelineError::Preprocessing { camera, source }),
        }
    }
    let features: [EyeFeatures; 2] = features.try_into().expect("two cameras");
    timings.image_preprocessing = ms(t);

    let t = Instant::now();
    let obs = [observation_from_features(Some(&features[0])), observation_from_features(Some(&features[1]))];
    let gaze = estimate_gaze(&obs, rig)?;
    timings.gaze_point_estimation = ms(t);

    let t = Instant::now();
    let maps = detector.detect(scene)?;
    let px = match gaze.scene_px {
        Some(px) => px,
        None => {
            let px = gaze_to_scene(&gaze.axis, &rig.scene_camera, &rig.working_plane).map_err(GazeError::from)?;
            return Err(FuseError::GazeOutOfBounds { u: px.u, v: px.v, width: maps.width, height: maps.height }.into());
        }
    };
    let selection = gaze_filter(&maps, px, fusion)?;
    timings.grasp_detection = ms(t);
    timings.total = ms(start);

    Ok(PipelineOutput { selection, gaze, features, maps, timings })
}

/// Keeps the most recent selection across frames that produce none.
#[derive(Debug, Clone, Default)]
pub struct SelectionTracker {
    last: Option<Selection>,
}

impl SelectionTracker {
    pub fn current(&self) -> Option<&Selection> {
        self.last.as_ref()
    }

    /// Records a frame result and returns the selection now in effect.
    pub fn update(&mut self, result: &Result<PipelineOutput, PipelineError>) -> Option<&Selection> {
        if let Ok(out) = result {
            self.last = Some(out.selection);
        }
        self.last.as_ref()
    }
}
