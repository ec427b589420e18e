//! Synthetic near-eye observations and tabletop scenes with known ground
//! truth.
//!
//! The eye is a spherical cornea plus a flat circular pupil in front of the
//! corneal center along the optical axis; refraction is not modeled. Each
//! eye camera carries an infrared source, by default at its optical center.

pub mod rig;
pub mod scene;

use image::{GrayImage, Luma};
use nalgebra::{Matrix3, Unit};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use rig::{EyeGeometry, Rig};
pub use scene::{make_scene, SceneFrame, SceneObject, SceneSpec};

use crate::geom::{project, CameraModel, GeomError, Pixel, Point3, UnitVec3, Vec3};
use crate::pupil::{Conic, Ellipse};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("eye is behind the camera")]
    EyeBehindCamera,
    #[error("pupil is seen edge-on")]
    DegenerateView,
    #[error("gaze target is not in front of the eye")]
    TargetBehindEye,
    #[error("scene needs at least one object")]
    EmptyScene,
    #[error("scene object falls outside the image")]
    ObjectOutOfView,
    #[error("invalid eye: {0}")]
    InvalidEye(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Ground-truth eye configuration in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeState {
    pub cornea_center: Point3,
    pub axis: UnitVec3,
    pub pupil_center: Point3,
    pub pupil_radius: f64,
    pub cornea_radius: f64,
}

impl EyeState {
    pub fn new(cornea_center: Point3, axis: Vec3, geometry: &EyeGeometry) -> Result<Self, SimError> {
        let axis = Unit::try_new(axis, 1e-15).ok_or(SimError::InvalidEye("zero axis"))?;
        if !(geometry.cornea_radius > geometry.pupil_radius && geometry.pupil_radius > 0.0) {
            return Err(SimError::InvalidEye("need cornea_radius > pupil_radius > 0"));
        }
        if !(geometry.pupil_offset > 0.0) {
            return Err(SimError::InvalidEye("pupil must sit in front of the corneal center"));
        }
        Ok(Self {
            cornea_center,
            axis,
            pupil_center: cornea_center + axis.into_inner() * geometry.pupil_offset,
            pupil_radius: geometry.pupil_radius,
            cornea_radius: geometry.cornea_radius,
        })
    }

    /// Eye at `cornea_center` looking at `target`.
    pub fn looking_at(cornea_center: Point3, target: Point3, geometry: &EyeGeometry) -> Result<Self, SimError> {
        let d = target - cornea_center;
        if d.norm() < 1e-9 {
            return Err(SimError::TargetBehindEye);
        }
        Self::new(cornea_center, d, geometry)
    }
}

/// Features one eye camera sees: the pupil outline and the corneal glint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearEyeObservation {
    pub pupil_ellipse: Ellipse,
    pub glint: Pixel,
    /// False for a blink frame.
    pub valid: bool,
}

impl NearEyeObservation {
    pub fn blink() -> Self {
        Self {
            pupil_ellipse: Ellipse { center: Pixel::default(), semi_major: 1.0, semi_minor: 1.0, tilt: 0.0 },
            glint: Pixel::default(),
            valid: false,
        }
    }

    /// Copy with independent Gaussian noise on the pupil center and glint.
    pub fn with_noise(&self, sigma: f64, rng: &mut impl Rng) -> Self {
        if sigma <= 0.0 {
            return *self;
        }
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        let mut out = *self;
        out.pupil_ellipse.center.u += n.sample(rng);
        out.pupil_ellipse.center.v += n.sample(rng);
        out.glint.u += n.sample(rng);
        out.glint.v += n.sample(rng);
        out
    }
}

/// Exact pupil outline and glint for one camera.
pub fn render_eye_features(eye: &EyeState, cam: &CameraModel, light: &Point3) -> Result<NearEyeObservation, SimError> {
    let pose = &cam.pose;
    let cc = pose.to_camera(&eye.cornea_center);
    let pc = pose.to_camera(&eye.pupil_center);
    if cc.z <= eye.cornea_radius || pc.z <= eye.pupil_radius {
        return Err(SimError::EyeBehindCamera);
    }
    let pupil_ellipse = project_disc(&pc, &pose.dir_to_camera(&eye.axis), eye.pupil_radius, cam)?;
    let spec = specular_point(eye, &pose.center(), light);
    let glint = cam.project_world(&spec)?;
    Ok(NearEyeObservation { pupil_ellipse, glint, valid: true })
}

/// Image of a disc of radius `r` centered at camera-frame `center` with
/// normal `normal`, from the conic mapped through the disc-plane homography.
fn project_disc(center: &Point3, normal: &Vec3, r: f64, cam: &CameraModel) -> Result<Ellipse, SimError> {
    let n = normal.normalize();
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&seed).normalize();
    let e2 = n.cross(&e1);
    let h = cam.intrinsic_matrix() * Matrix3::from_columns(&[e1, e2, center.coords]);
    let h_inv = h.try_inverse().ok_or(SimError::DegenerateView)?;
    let disc = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -r * r));
    let q = h_inv.transpose() * disc * h_inv;
    Conic::from_matrix(&q).to_ellipse().ok_or(SimError::DegenerateView)
}

/// Point on the corneal sphere that mirrors `light` into the camera at
/// `camera`. Closed form when the two coincide; otherwise a fixed-point
/// iteration on the bisector normal.
pub fn specular_point(eye: &EyeState, camera: &Point3, light: &Point3) -> Point3 {
    let c = eye.cornea_center;
    let r = eye.cornea_radius;
    let mut n = (camera - c).normalize();
    if (light - camera).norm() > 1e-12 {
        for _ in 0..100 {
            let s = c + n * r;
            let next = ((camera - s).normalize() + (light - s).normalize()).normalize();
            let done = (next - n).norm() < 1e-15;
            n = next;
            if done {
                break;
            }
        }
    }
    c + n * r
}

/// Rendering intensities and glint size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EyeRenderStyle {
    pub background: f64,
    pub pupil: f64,
    pub glint: f64,
    pub glint_radius: f64,
}

impl Default for EyeRenderStyle {
    fn default() -> Self {
        Self { background: 170.0, pupil: 40.0, glint: 255.0, glint_radius: 2.5 }
    }
}

/// Rasterizes an observation: anti-aliased dark pupil, saturated glint disc,
/// additive Gaussian noise. Blink frames are plain background.
pub fn render_eye_image(
    obs: &NearEyeObservation,
    size: (u32, u32),
    noise_sigma: f64,
    style: &EyeRenderStyle,
    rng: &mut impl Rng,
) -> GrayImage {
    const SUB: usize = 8;
    let (w, h) = size;
    let mut values = vec![style.background; (w * h) as usize];
    if obs.valid {
        let e = &obs.pupil_ellipse;
        let g = obs.glint;
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64, y as f64);
                let pupil_cov = coverage(u, v, SUB, e.semi_minor, |pu, pv| e.normalized_radius_sq(pu, pv).sqrt() - 1.0);
                let glint_cov = coverage(u, v, SUB, style.glint_radius, |pu, pv| {
                    ((pu - g.u).hypot(pv - g.v) - style.glint_radius) / style.glint_radius
                });
                let base = style.background + (style.pupil - style.background) * pupil_cov;
                values[(y * w + x) as usize] = base + (style.glint - base) * glint_cov;
            }
        }
    }
    if noise_sigma > 0.0 {
        let n = Normal::new(0.0, noise_sigma).expect("positive sigma");
        values.iter_mut().for_each(|p| *p += n.sample(rng));
    }
    GrayImage::from_fn(w, h, |x, y| Luma([values[(y * w + x) as usize].round().clamp(0.0, 255.0) as u8]))
}

/// Fraction of the pixel at `(u, v)` where `f < 0`. `f` is a normalized
/// signed distance and `scale` converts it to pixels for the coarse test.
fn coverage(u: f64, v: f64, sub: usize, scale: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let d = f(u, v) * scale;
    if d < -1.5 {
        return 1.0;
    }
    if d > 1.5 {
        return 0.0;
    }
    let mut inside = 0;
    for sy in 0..sub {
        for sx in 0..sub {
            let pu = u - 0.5 + (sx as f64 + 0.5) / sub as f64;
            let pv = v - 0.5 + (sy as f64 + 0.5) / sub as f64;
            if f(pu, pv) < 0.0 {
                inside += 1;
            }
        }
    }
    inside as f64 / (sub * sub) as f64
}

/// Eye state looking at `gaze_target` plus the two cameras' observations,
/// with optional Gaussian pixel noise on the features.
pub fn sample_eye_pair(
    gaze_target: &Point3,
    rig: &Rig,
    feature_noise: f64,
    rng: &mut impl Rng,
) -> Result<(EyeState, [NearEyeObservation; 2]), SimError> {
    let cornea = rig.eye.cornea_center;
    if (gaze_target - cornea).dot(&rig.forward()) <= 0.0 {
        return Err(SimError::TargetBehindEye);
    }
    let eye = EyeState::looking_at(cornea, *gaze_target, &rig.eye)?;
    let obs = observe(&eye, rig, feature_noise, rng)?;
    Ok((eye, obs))
}

/// Both cameras' observations of a given eye state.
pub fn observe(eye: &EyeState, rig: &Rig, feature_noise: f64, rng: &mut impl Rng) -> Result<[NearEyeObservation; 2], SimError> {
    let lights = rig.light_positions();
    let a = render_eye_features(eye, &rig.eye_cameras[0], &lights[0])?.with_noise(feature_noise, rng);
    let b = render_eye_features(eye, &rig.eye_cameras[1], &lights[1])?.with_noise(feature_noise, rng);
    Ok([a, b])
}

/// Sanity check used by tests: the projected pupil center in a camera.
pub fn projected_pupil_center(eye: &EyeState, cam: &CameraModel) -> Result<Pixel, GeomError> {
    project(&cam.pose.to_camera(&eye.pupil_center), cam)
}
