//! Per-stage latency measurement over repeated simulated frames.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{GraspDetector, NetworkDetector, ScriptedDetector};
use super::pipeline::{run_pipeline, Stage};
use super::FusionConfig;
use crate::eyesim::{make_scene, observe, EyeState, Rig, SceneObject, SceneSpec};
use crate::gaze::estimate_gaze;
use crate::geom::{intersect_ray_plane, Pixel};
use crate::graspnet::{forward, image_tensor, init_params, ModelConfig};
use crate::pupil::PupilDetector;

/// Which grasp detector the benchmark drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Scripted,
    /// Freshly initialized network with the given config.
    Init { config: ModelConfig },
    /// Network loaded from a model file.
    Model { path: PathBuf },
}

impl DetectorSpec {
    pub fn build(&self) -> anyhow::Result<Box<dyn GraspDetector>> {
        Ok(match self {
            DetectorSpec::Scripted => Box::new(ScriptedDetector),
            DetectorSpec::Init { config } => Box::new(NetworkDetector::new("init", config.clone(), init_params(config)?)?),
            DetectorSpec::Model { path } => Box::new(NetworkDetector::load(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Rig file; the built-in rig when absent.
    pub rig: Option<PathBuf>,
    pub detector: DetectorSpec,
    pub scene: SceneSpec,
    pub fusion: FusionConfig,
    /// Config whose forward pass is timed separately.
    pub forward_config: Option<ModelConfig>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            warmup: 3,
            seed: 7,
            rig: None,
            detector: DetectorSpec::Init { config: ModelConfig::toy() },
            scene: default_bench_scene(),
            fusion: FusionConfig::default(),
            forward_config: Some(ModelConfig::toy()),
        }
    }
}

fn default_bench_scene() -> SceneSpec {
    SceneSpec {
        objects: vec![
            SceneObject::Bar { x: -0.06, y: 0.0, yaw: 0.4, length: 0.10, thickness: 0.025 },
            SceneObject::Box { x: 0.06, y: 0.02, yaw: -0.3, length: 0.07, width: 0.045 },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub samples: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

impl StageStats {
    /// Nearest-rank order statistics.
    pub fn from_samples(stage: impl Into<String>, samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            if s.is_empty() {
                return f64::NAN;
            }
            let k = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
            s[k - 1]
        };
        let mean = if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
        Self { stage: stage.into(), samples: s.len(), median_ms: rank(0.5), p95_ms: rank(0.95), mean_ms: mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub failed_frames: usize,
    pub detector: String,
    /// The five pipeline stages, total last.
    pub stages: Vec<StageStats>,
    /// Gaze estimation alone on feature-level observations.
    pub gaze_on_features: StageStats,
    pub forward: Option<StageStats>,
    pub sum_of_stage_medians_ms: f64,
}

impl BenchReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == stage.label())
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>12} {:>12}\n", "Stage", "median (ms)", "p95 (ms)");
        out.push_str(&"-".repeat(54));
        out.push('\n');
        let mut rows: Vec<&StageStats> = self.stages.iter().collect();
        rows.push(&self.gaze_on_features);
        rows.extend(self.forward.as_ref());
        for s in rows {
            out.push_str(&format!("{:<28} {:>12.3} {:>12.3}\n", s.stage, s.median_ms, s.p95_ms));
        }
        out.push_str(&format!("frames {} (failed {}), detector {}\n", self.iterations, self.failed_frames, self.detector));
        out
    }
}

pub fn run_bench(cfg: &BenchConfig) -> anyhow::Result<BenchReport> {
    let rig = match &cfg.rig {
        Some(p) => Rig::load(p)?,
        None => Rig::default(),
    };
    let detector = cfg.detector.build()?;
    let pupil = PupilDetector::new(rig.pupil.clone());
    let scene = make_scene(&cfg.scene, &rig.scene_camera, &rig.working_plane, rig.scene_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (rig.scene_size.0 as f64, rig.scene_size.1 as f64);

    let random_eye = |rng: &mut ChaCha8Rng| -> anyhow::Result<EyeState> {
        let px = Pixel::new(rng.random_range(0.25 * w..0.75 * w), rng.random_range(0.25 * h..0.75 * h));
        let target = intersect_ray_plane(&rig.scene_camera.pixel_ray(&px), &rig.working_plane)?;
        Ok(EyeState::looking_at(rig.eye.cornea_center, target, &rig.eye)?)
    };

    let mut per_stage: Vec<Vec<f64>> = vec![Vec::new(); Stage::ALL.len()];
    let mut failed = 0;
    for i in 0..cfg.warmup + cfg.iterations {
        let eye = random_eye(&mut rng)?;
        let obs = observe(&eye, &rig, 0.0, &mut rng)?;
        match run_pipeline(&scene, &obs, &rig, &pupil, detector.as_ref(), &cfg.fusion, &mut rng) {
            Ok(out) if i >= cfg.warmup => {
                for (k, stage) in Stage::ALL.iter().enumerate() {
                    per_stage[k].push(out.timings.get(*stage));
                }
            }
            Ok(_) => {}
            Err(e) => {
                log::debug!("bench frame {i}: {e}");
                if i >= cfg.warmup {
                    failed += 1;
                }
            }
        }
    }
    let stages: Vec<StageStats> =
        Stage::ALL.iter().zip(&per_stage).map(|(s, v)| StageStats::from_samples(s.label(), v)).collect();
    let sum = stages[..4].iter().map(|s| s.median_ms).sum();

    let mut gaze_ms = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let obs = observe(&random_eye(&mut rng)?, &rig, 0.0, &mut rng)?;
        let t = Instant::now();
        let est = estimate_gaze(&obs, &rig);
        gaze_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(est.ok());
    }

    let forward_stats = match &cfg.forward_config {
        Some(fc) => {
            let params = init_params(fc)?;
            let input = image_tensor(&scene.image, fc.input_size);
            let mut v = Vec::with_capacity(cfg.iterations);
            for _ in 0..cfg.iterations {
                let t = Instant::now();
                std::hint::black_box(forward(&input, &params, fc)?);
                v.push(t.elapsed().as_secs_f64() * 1e3);
            }
            Some(StageStats::from_samples(format!("GraspNet forward {0}x{0}", fc.input_size), &v))
        }
        None => None,
    };

    Ok(BenchReport {
        iterations: cfg.iterations,
        failed_frames: failed,
        detector: detector.name().to_string(),
        stages,
        gaze_on_features: StageStats::from_samples("Gaze (synthetic features)", &gaze_ms),
        forward: forward_stats,
        sum_of_stage_medians_ms: sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_statistics() {
        let s = StageStats::from_samples("x", &(1..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!((s.median_ms, s.p95_ms, s.samples), (50.0, 95.0, 100));
        assert!((s.mean_ms - 50.5).abs() < 1e-12);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: BenchConfig = serde_json::from_str(r#"{"iterations": 5, "detector": {"kind": "scripted"}}"#).unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.detector, DetectorSpec::Scripted);
        assert_eq!(cfg.scene, default_bench_scene());
    }

    proptest! {
        #[test]
        fn p95_never_below_median(v in prop::collection::vec(0.0f64..1e3, 1..200)) {
            let s = StageStats::from_samples("x", &v);
            prop_assert!(s.p95_ms >= s.median_ms);
        }
    }
}
