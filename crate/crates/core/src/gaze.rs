//! Optical axis from two eye cameras, and its mapping into the scene image.
//!
//! Each camera contributes the plane through its center, the pupil center
//! and the glint; with the light at the camera this plane contains the
//! optical axis, so two cameras pin down its direction. The axis is anchored
//! at the corneal center, triangulated from the two glint rays.

use serde::{Deserialize, Serialize};

use crate::eyesim::{NearEyeObservation, Rig};
use crate::geom::{
    backproject, intersect_ray_plane, optical_axis_direction, plane_normal, triangulate_rays, CameraModel, GeomError,
    Pixel, Plane, Ray, UnitVec3, Vec3,
};
use crate::pupil::EyeFeatures;

/// Estimates with `condition` below this are rejected.
pub const MIN_CONDITION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GazeError {
    #[error("blink frame")]
    BlinkFrame,
    #[error("camera planes nearly coincide (condition {0:.4})")]
    IllConditioned(f64),
    #[error("timestamps must strictly increase ({prev} then {next})")]
    NonMonotonicTimestamps { prev: f64, next: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeEstimate {
    /// Origin at the estimated corneal center, direction along the optical axis.
    pub axis: Ray,
    /// Gaze point in the scene image; `None` when it falls outside.
    pub scene_px: Option<Pixel>,
    /// `1 - |n1·n2|`: 0 for coplanar camera planes, 1 for orthogonal ones.
    pub condition: f64,
}

fn unit_ray_dir(px: &Pixel, cam: &CameraModel) -> Result<UnitVec3, GeomError> {
    let p = backproject(px, cam);
    UnitVec3::try_new(cam.pose.dir_to_world(&p.coords), 1e-15).ok_or(GeomError::ZeroVector)
}

/// Optical axis from two observations. The sign is chosen so the axis points
/// away from the eye toward the cameras' side.
pub fn estimate_optical_axis(
    obs1: &NearEyeObservation,
    cam1: &CameraModel,
    obs2: &NearEyeObservation,
    cam2: &CameraModel,
) -> Result<GazeEstimate, GazeError> {
    estimate_inner(obs1, cam1, obs2, cam2, None)
}

/// As [`estimate_optical_axis`] with an explicit forward hint.
pub fn estimate_optical_axis_toward(
    obs1: &NearEyeObservation,
    cam1: &CameraModel,
    obs2: &NearEyeObservation,
    cam2: &CameraModel,
    forward: &Vec3,
) -> Result<GazeEstimate, GazeError> {
    estimate_inner(obs1, cam1, obs2, cam2, Some(*forward))
}

fn estimate_inner(
    obs1: &NearEyeObservation,
    cam1: &CameraModel,
    obs2: &NearEyeObservation,
    cam2: &CameraModel,
    forward: Option<Vec3>,
) -> Result<GazeEstimate, GazeError> {
    if !obs1.valid || !obs2.valid {
        return Err(GazeError::BlinkFrame);
    }
    let g1 = unit_ray_dir(&obs1.glint, cam1)?;
    let g2 = unit_ray_dir(&obs2.glint, cam2)?;
    let n1 = plane_normal(&unit_ray_dir(&obs1.pupil_ellipse.center, cam1)?, &g1)?;
    let n2 = plane_normal(&unit_ray_dir(&obs2.pupil_ellipse.center, cam2)?, &g2)?;
    let condition = 1.0 - n1.dot(&n2).abs();

    let (c1, c2) = (cam1.pose.center(), cam2.pose.center());
    let (cornea, _gap) = triangulate_rays(&Ray::new(c1, g1.into_inner())?, &Ray::new(c2, g2.into_inner())?)?;
    let forward = forward.unwrap_or_else(|| ((c1 - cornea).normalize() + (c2 - cornea).normalize()) / 2.0);
    let dir = optical_axis_direction(&n1, &n2, &forward)?;
    if condition < MIN_CONDITION {
        return Err(GazeError::IllConditioned(condition));
    }
    Ok(GazeEstimate { axis: Ray { origin: cornea, dir }, scene_px: None, condition })
}

/// Pixel where the gaze ray meets the working plane, seen by the scene camera.
pub fn gaze_to_scene(axis: &Ray, scene_cam: &CameraModel, plane: &Plane) -> Result<Pixel, GeomError> {
    let hit = intersect_ray_plane(axis, plane)?;
    scene_cam.project_world(&hit)
}

/// Axis estimate plus its scene pixel for a rig.
pub fn estimate_gaze(obs: &[NearEyeObservation; 2], rig: &Rig) -> Result<GazeEstimate, GazeError> {
    let [c1, c2] = &rig.eye_cameras;
    let mut est = estimate_optical_axis_toward(&obs[0], c1, &obs[1], c2, &rig.forward())?;
    let px = gaze_to_scene(&est.axis, &rig.scene_camera, &rig.working_plane)?;
    est.scene_px = px.in_bounds(rig.scene_size.0, rig.scene_size.1).then_some(px);
    Ok(est)
}

/// Observation built from measured image features; `None` features mean a
/// blink or a missing glint.
pub fn observation_from_features(features: Option<&EyeFeatures>) -> NearEyeObservation {
    match features {
        Some(f) => match f.glint {
            Some(glint) => NearEyeObservation { pupil_ellipse: f.pupil, glint, valid: true },
            None => NearEyeObservation::blink(),
        },
        None => NearEyeObservation::blink(),
    }
}

/// Exponential smoothing of a timestamped gaze stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSmoother {
    /// Time constant in milliseconds.
    pub tau_ms: f64,
    #[serde(skip)]
    state: Option<(f64, Pixel)>,
}

impl Default for GazeSmoother {
    fn default() -> Self {
        Self::new(50.0)
    }
}

impl GazeSmoother {
    pub fn new(tau_ms: f64) -> Self {
        Self { tau_ms, state: None }
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn current(&self) -> Option<(f64, Pixel)> {
        self.state
    }

    pub fn update(&mut self, t_ms: f64, px: Pixel) -> Result<(f64, Pixel), GazeError> {
        let out = match self.state {
            None => px,
            Some((prev, _)) if t_ms <= prev => {
                return Err(GazeError::NonMonotonicTimestamps { prev, next: t_ms });
            }
            Some((prev, s)) => {
                let alpha = if self.tau_ms > 0.0 { 1.0 - (-(t_ms - prev) / self.tau_ms).exp() } else { 1.0 };
                Pixel::new(s.u + alpha * (px.u - s.u), s.v + alpha * (px.v - s.v))
            }
        };
        self.state = Some((t_ms, out));
        Ok((t_ms, out))
    }
}
