//! Sources of grasp maps for a scene frame.

use std::path::Path;

use crate::eyesim::SceneFrame;
use crate::grasp::{encode_truth, GraspError, GraspMaps};
use crate::graspnet::{forward, image_tensor, load_model, GraspNetError, ModelConfig, ParamSet};

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Net(#[from] GraspNetError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error("model expects {0} input channels; scene frames carry RGB only")]
    Channels(usize),
}

/// Anything that turns a scene frame into grasp maps of the frame's size.
pub trait GraspDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, frame: &SceneFrame) -> Result<GraspMaps, DetectError>;
}

/// The grasp network with fixed weights. Frames are resampled to the model
/// input size and the maps resampled back.
#[derive(Debug, Clone)]
pub struct NetworkDetector {
    pub name: String,
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl NetworkDetector {
    pub fn new(name: impl Into<String>, config: ModelConfig, params: ParamSet) -> Result<Self, GraspNetError> {
        config.validate()?;
        crate::graspnet::check_params(&config, &params)?;
        Ok(Self { name: name.into(), config, params })
    }

    pub fn load(path: &Path) -> Result<Self, GraspNetError> {
        let (config, params) = load_model(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        Self::new(name, config, params)
    }

    /// Maps at model resolution for an RGB image.
    pub fn predict(&self, image: &image::RgbImage) -> Result<GraspMaps, DetectError> {
        if self.config.in_channels != 3 {
            return Err(DetectError::Channels(self.config.in_channels));
        }
        let input = image_tensor(image, self.config.input_size);
        Ok(forward(&input, &self.params, &self.config)?.remove(0))
    }
}

impl GraspDetector for NetworkDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, frame: &SceneFrame) -> Result<GraspMaps, DetectError> {
        let maps = self.predict(&frame.image)?;
        Ok(resample_maps(&maps, frame.image.width() as usize, frame.image.height() as usize))
    }
}

/// Oracle detector that rasterizes the frame's ground-truth grasps, standing
/// in for a trained network in simulation.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector;

impl GraspDetector for ScriptedDetector {
    fn name(&self) -> &str {
        "scripted"
    }

    fn detect(&self, frame: &SceneFrame) -> Result<GraspMaps, DetectError> {
        let size = (frame.image.width() as usize, frame.image.height() as usize);
        Ok(encode_truth(&frame.truth_grasps, size)?)
    }
}

/// Nearest-neighbour resampling; widths scale with the horizontal factor.
pub fn resample_maps(maps: &GraspMaps, width: usize, height: usize) -> GraspMaps {
    if (maps.width, maps.height) == (width, height) {
        return maps.clone();
    }
    let scale = width as f64 / maps.width as f64;
    let mut out = GraspMaps::zeros(width, height);
    for y in 0..height {
        let sy = (y * maps.height / height).min(maps.height - 1);
        for x in 0..width {
            let sx = (x * maps.width / width).min(maps.width - 1);
            let (i, j) = (out.index(x, y), maps.index(sx, sy));
            out.quality[i] = maps.quality[j];
            out.cos2t[i] = maps.cos2t[j];
            out.sin2t[i] = maps.sin2t[j];
            out.grip_width[i] = maps.grip_width[j] * scale;
        }
    }
    out
}
