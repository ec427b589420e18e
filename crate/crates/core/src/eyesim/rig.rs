//! Rig description shared by the simulator, the gaze estimator and the
//! service: two eye cameras with their infrared sources, the scene camera
//! and the working plane. All lengths in meters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EyeRenderStyle;
use crate::geom::{CameraModel, Plane, Point3, Pose, Vec3};
use crate::pupil::{FrstConfig, PupilConfig};

/// Eye dimensions and the fixed corneal center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EyeGeometry {
    pub cornea_center: Point3,
    pub cornea_radius: f64,
    pub pupil_radius: f64,
    /// Distance from the corneal center to the pupil plane.
    pub pupil_offset: f64,
}

impl Default for EyeGeometry {
    fn default() -> Self {
        Self { cornea_center: Point3::origin(), cornea_radius: 7.8e-3, pupil_radius: 2.0e-3, pupil_offset: 4.2e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub eye_cameras: [CameraModel; 2],
    /// Infrared source per eye camera; `None` puts each at its camera center.
    #[serde(default)]
    pub lights: Option<[Point3; 2]>,
    pub eye_image_size: (u32, u32),
    pub scene_camera: CameraModel,
    pub scene_size: (u32, u32),
    pub working_plane: Plane,
    #[serde(default)]
    pub eye: EyeGeometry,
    /// Direction the eye faces; disambiguates the optical-axis sign.
    #[serde(default = "default_forward")]
    pub forward: [f64; 3],
    #[serde(default)]
    pub pupil: PupilConfig,
    #[serde(default)]
    pub render: EyeRenderStyle,
    /// Intensity noise added to rendered eye images.
    #[serde(default)]
    pub eye_noise: f64,
}

fn default_forward() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl Rig {
    pub fn forward(&self) -> Vec3 {
        Vec3::from(self.forward).normalize()
    }

    pub fn light_positions(&self) -> [Point3; 2] {
        self.lights.unwrap_or([self.eye_cameras[0].pose.center(), self.eye_cameras[1].pose.center()])
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }
}

impl Default for Rig {
    /// Desk rig: eye at the origin looking along +z with image-style axes
    /// (y down), two 400×400 eye cameras about 39 mm away below-left and
    /// below-right, a 224×224 scene camera 3 cm above the eye and a working
    /// plane 45 cm ahead tilted 20° toward the viewer.
    fn default() -> Self {
        let eye = EyeGeometry::default();
        let eye_cam = |x: f64| {
            let pose = Pose::look_at(Point3::new(x, 0.0245, 0.025), eye.cornea_center, Vec3::y()).expect("valid pose");
            CameraModel::new(700.0, 700.0, 199.5, 199.5, pose).expect("valid camera")
        };
        let target = Point3::new(0.0, 0.0, 0.45);
        let scene_pose = Pose::look_at(Point3::new(0.0, -0.03, 0.0), target, Vec3::y()).expect("valid pose");
        let tilt = 20f64.to_radians();
        let pupil = PupilConfig {
            frst: FrstConfig { min_radius: 8, max_radius: 48, stride: 4, downsample: 4, ..FrstConfig::default() },
            // oblique views flatten the pupil and weaken its symmetry response
            blink_fraction: 0.03,
            ..PupilConfig::default()
        };
        Self {
            eye_cameras: [eye_cam(-0.017), eye_cam(0.017)],
            lights: None,
            eye_image_size: (400, 400),
            scene_camera: CameraModel::new(260.0, 260.0, 111.5, 111.5, scene_pose).expect("valid camera"),
            scene_size: (224, 224),
            working_plane: Plane::through(&target, Vec3::new(0.0, -tilt.sin(), -tilt.cos())).expect("valid plane"),
            eye,
            forward: default_forward(),
            pupil,
            render: EyeRenderStyle::default(),
            eye_noise: 0.0,
        }
    }
}
