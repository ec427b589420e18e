//! Dataset evaluation under the rectangle protocol: a prediction counts as
//! a success when it matches any ground-truth rectangle.

use std::path::{Path, PathBuf};

use image::imageops;
use serde::{Deserialize, Serialize};

use super::{forward, image_tensor, rgbd_tensor, ModelConfig, ParamSet, Tensor};
use crate::geom::Pixel;
use crate::grasp::cornell::{load_cornell, Annotation};
use crate::grasp::{angle_difference, decode_grasp, is_success, jaccard, GraspRectangle, DEFAULT_FIXED_HEIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Rgb,
    Rgbd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub success: bool,
    pub predicted: crate::grasp::RectangleJson,
    /// Best Jaccard index over the ground truth.
    pub best_jaccard: f64,
    /// Angle difference to the best-overlapping truth, degrees.
    pub angle_error_deg: f64,
    pub truth_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    pub skipped: Vec<String>,
    pub successes: usize,
    pub success_rate: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>10} {:>10}\n", "image", "success", "jaccard", "dθ (deg)");
        for r in &self.images {
            out.push_str(&format!(
                "{:<24} {:>8} {:>10.3} {:>10.1}\n",
                r.image_id,
                if r.success { "yes" } else { "no" },
                r.best_jaccard,
                r.angle_error_deg
            ));
        }
        out.push_str(&format!(
            "success rate {}/{} = {:.2}%{}\n",
            self.successes,
            self.images.len(),
            100.0 * self.success_rate,
            if self.skipped.is_empty() { String::new() } else { format!(" ({} skipped)", self.skipped.len()) }
        ));
        out
    }
}

/// `*cpos.txt` files under `dir`, sorted.
pub fn annotation_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("cpos.txt")))
        .collect();
    files.sort();
    Ok(files)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    path.with_file_name(format!("{}{suffix}", name.trim_end_matches("cpos.txt")))
}

/// Network input for one annotated image, center-cropped.
pub fn load_input(cpos: &Path, crop: usize, mode: InputMode, input_size: usize) -> anyhow::Result<(Annotation, Tensor)> {
    let rgb = image::open(sibling(cpos, "r.png"))?.to_rgb8();
    let size = (rgb.width() as usize, rgb.height() as usize);
    let ann = load_cornell(cpos, size, crop)?;
    let (ox, oy) = (ann.crop_offset.0 as u32, ann.crop_offset.1 as u32);
    let side = |n: u32, o: u32| (crop as u32).min(n - o);
    let rgb_crop = imageops::crop_imm(&rgb, ox, oy, side(rgb.width(), ox), side(rgb.height(), oy)).to_image();
    let tensor = match mode {
        InputMode::Rgb => image_tensor(&rgb_crop, input_size),
        InputMode::Rgbd => {
            let depth = image::open(sibling(cpos, "d.png"))?.to_luma16();
            let d = imageops::crop_imm(&depth, ox, oy, side(depth.width(), ox), side(depth.height(), oy)).to_image();
            rgbd_tensor(&rgb_crop, &d, input_size)
        }
    };
    Ok((ann, tensor))
}

/// Grasp decoded from model-resolution maps, mapped into crop pixels.
pub fn predict_in_crop(input: &Tensor, params: &ParamSet, cfg: &ModelConfig, crop: usize) -> anyhow::Result<GraspRectangle> {
    let maps = forward(input, params, cfg)?.remove(0);
    let best = decode_grasp(&maps, DEFAULT_FIXED_HEIGHT)?.grasp;
    let s = crop as f64 / cfg.input_size as f64;
    let center = Pixel::new(best.center.u * s + (s - 1.0) / 2.0, best.center.v * s + (s - 1.0) / 2.0);
    Ok(GraspRectangle::new(center, best.theta, (best.width * s).max(1.0), DEFAULT_FIXED_HEIGHT)?)
}

pub fn score(pred: &GraspRectangle, truths: &[GraspRectangle]) -> anyhow::Result<(bool, f64, f64)> {
    let success = is_success(pred, truths)?;
    let (best_j, best_t) = truths
        .iter()
        .map(|t| (jaccard(pred, t), t))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty truths");
    Ok((success, best_j, angle_difference(pred.theta, best_t.theta).to_degrees()))
}

pub fn evaluate_dataset(
    dir: &Path,
    params: &ParamSet,
    cfg: &ModelConfig,
    mode: InputMode,
    crop: usize,
) -> anyhow::Result<EvalReport> {
    let want = match mode {
        InputMode::Rgb => 3,
        InputMode::Rgbd => 4,
    };
    anyhow::ensure!(cfg.in_channels == want, "model takes {} channels but {mode:?} input has {want}", cfg.in_channels);
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for cpos in annotation_files(dir)? {
        let (ann, input) = match load_input(&cpos, crop, mode, cfg.input_size) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{}: {e}", cpos.display());
                skipped.push(cpos.display().to_string());
                continue;
            }
        };
        if ann.rects.is_empty() {
            skipped.push(ann.image_id);
            continue;
        }
        let pred = predict_in_crop(&input, params, cfg, crop)?;
        let (success, best_jaccard, angle_error_deg) = score(&pred, &ann.rects)?;
        images.push(ImageResult {
            image_id: ann.image_id,
            success,
            predicted: pred.to_json(),
            best_jaccard,
            angle_error_deg,
            truth_count: ann.rects.len(),
        });
    }
    let successes = images.iter().filter(|r| r.success).count();
    let success_rate = if images.is_empty() { 0.0 } else { successes as f64 / images.len() as f64 };
    Ok(EvalReport { images, skipped, successes, success_rate })
}
