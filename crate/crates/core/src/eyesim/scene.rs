//! Tabletop scenes of flat primitives lying on the working plane, rendered
//! from the scene camera by ray casting, with grasp ground truth.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{intersect_ray_plane, CameraModel, Pixel, Plane, Point3, Vec3};
use crate::grasp::GraspRectangle;

/// A primitive in working-plane coordinates: `x`, `y` in meters from the
/// point where the scene camera's optical axis meets the plane, `yaw` in
/// radians from the plane's x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneObject {
    Bar { x: f64, y: f64, yaw: f64, length: f64, thickness: f64 },
    Disc { x: f64, y: f64, radius: f64 },
    Box { x: f64, y: f64, yaw: f64, length: f64, width: f64 },
}

impl SceneObject {
    fn center(&self) -> (f64, f64) {
        match *self {
            Self::Bar { x, y, .. } | Self::Disc { x, y, .. } | Self::Box { x, y, .. } => (x, y),
        }
    }

    /// `(yaw, long half-extent, short half-extent)`.
    fn extents(&self) -> (f64, f64, f64) {
        match *self {
            Self::Bar { yaw, length, thickness, .. } => (yaw, length / 2.0, thickness / 2.0),
            Self::Disc { radius, .. } => (0.0, radius, radius),
            Self::Box { yaw, length, width, .. } => (yaw, length.max(width) / 2.0, length.min(width) / 2.0),
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center();
        let (dx, dy) = (px - cx, py - cy);
        match *self {
            Self::Disc { radius, .. } => dx.hypot(dy) <= radius,
            _ => {
                let (yaw, a, b) = self.extents();
                let along = dx * yaw.cos() + dy * yaw.sin();
                let across = -dx * yaw.sin() + dy * yaw.cos();
                along.abs() <= a && across.abs() <= b
            }
        }
    }

    fn color(&self, index: usize) -> [u8; 3] {
        const PALETTE: [[u8; 3]; 6] =
            [[200, 60, 50], [50, 110, 200], [60, 170, 80], [220, 180, 40], [150, 70, 170], [40, 170, 170]];
        PALETTE[index % PALETTE.len()]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
}

/// Rendered scene with ground truth.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub image: RgbImage,
    /// One rectangle per object, in object order.
    pub truth_grasps: Vec<GraspRectangle>,
    pub working_plane: Plane,
    pub gaze_truth: Option<Pixel>,
}

const TABLE: [u8; 3] = [180, 170, 150];
const SKY: [u8; 3] = [90, 90, 90];
/// Gripper opening relative to the object's short extent.
const OPENING_MARGIN: f64 = 1.5;
/// Jaw size relative to the opening.
const JAW_RATIO: f64 = 0.5;

/// In-plane frame anchored where the camera's optical axis hits the plane,
/// with `e1` following the image `u` direction.
pub fn plane_frame(cam: &CameraModel, plane: &Plane) -> Result<(Point3, Vec3, Vec3), SimError> {
    let axis = cam.pixel_ray(&Pixel::new(cam.cx, cam.cy));
    let anchor = intersect_ray_plane(&axis, plane)?;
    let n = plane.normal.into_inner();
    let cam_x = cam.pose.dir_to_world(&Vec3::x());
    let e1 = (cam_x - n * n.dot(&cam_x)).normalize();
    let mut e2 = n.cross(&e1);
    // keep e2 running with image v
    if e2.dot(&cam.pose.dir_to_world(&Vec3::y())) < 0.0 {
        e2 = -e2;
    }
    Ok((anchor, e1, e2))
}

/// World point of plane coordinates `(x, y)`.
pub fn plane_point(frame: &(Point3, Vec3, Vec3), x: f64, y: f64) -> Point3 {
    frame.0 + frame.1 * x + frame.2 * y
}

/// Renders the objects (later ones on top) and derives one grasp rectangle
/// per object, perpendicular to its long axis.
pub fn make_scene(spec: &SceneSpec, cam: &CameraModel, plane: &Plane, size: (u32, u32)) -> Result<SceneFrame, SimError> {
    if spec.objects.is_empty() {
        return Err(SimError::EmptyScene);
    }
    let frame = plane_frame(cam, plane)?;
    let (origin, e1, e2) = frame;
    let image = RgbImage::from_fn(size.0, size.1, |x, y| {
        let ray = cam.pixel_ray(&Pixel::new(x as f64, y as f64));
        let Ok(p) = intersect_ray_plane(&ray, plane) else { return Rgb(SKY) };
        let d = p - origin;
        let (px, py) = (d.dot(&e1), d.dot(&e2));
        let hit = spec.objects.iter().enumerate().rev().find(|(_, o)| o.contains(px, py));
        Rgb(hit.map_or(TABLE, |(i, o)| o.color(i)))
    });

    let mut truth_grasps = Vec::with_capacity(spec.objects.len());
    for obj in &spec.objects {
        let (cx, cy) = obj.center();
        let (yaw, long, short) = obj.extents();
        let along = (yaw.cos(), yaw.sin());
        let across = (-yaw.sin(), yaw.cos());
        let center_w = plane_point(&frame, cx, cy);
        let center = cam.project_world(&center_w)?;
        let px = |dx: f64, dy: f64| cam.project_world(&plane_point(&frame, cx + dx, cy + dy));
        let long_end = px(along.0 * long, along.1 * long)?;
        let side_a = px(across.0 * short, across.1 * short)?;
        let side_b = px(-across.0 * short, -across.1 * short)?;
        let theta = match obj {
            SceneObject::Disc { .. } => 0.0,
            _ => (long_end.v - center.v).atan2(long_end.u - center.u) + std::f64::consts::FRAC_PI_2,
        };
        let width = OPENING_MARGIN * side_a.dist(&side_b);
        let rect = GraspRectangle::new(center, theta, width, JAW_RATIO * width).map_err(|_| SimError::DegenerateView)?;
        if !rect.corners().iter().all(|c| c.in_bounds(size.0, size.1)) {
            return Err(SimError::ObjectOutOfView);
        }
        truth_grasps.push(rect);
    }
    Ok(SceneFrame { image, truth_grasps, working_plane: *plane, gaze_truth: None })
}
