//! Pinhole camera and 3D ray geometry.
//!
//! World and camera frames are right-handed with image `u` to the right and
//! `v` down. A [`CameraModel`] stores the world→camera rigid transform, so a
//! world point `X` lands in the camera frame at `R·X + t`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;

/// Threshold on the cross-product norm of two unit vectors below which they
/// are treated as parallel.
pub const EPS_PARALLEL: f64 = 1e-8;

const EPS_DEPTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("point has non-positive depth (z = {0})")]
    NonPositiveDepth(f64),
    #[error("pupil and glint directions are collinear")]
    DegenerateDirections,
    #[error("planes are parallel")]
    ParallelPlanes,
    #[error("rays are parallel")]
    ParallelRays,
    #[error("ray is parallel to the plane")]
    ParallelToPlane,
    #[error("plane lies behind the ray origin (t = {0})")]
    BehindOrigin(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("vector has zero length")]
    ZeroVector,
}

/// Image coordinates in pixels. Integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// True when the pixel lies inside a `width`×`height` image, using the
    /// pixel-center convention (valid range `[-0.5, size - 0.5)`).
    pub fn in_bounds(&self, width: u32, height: u32) -> bool {
        self.u >= -0.5 && self.v >= -0.5 && self.u < width as f64 - 0.5 && self.v < height as f64 - 0.5
    }
}

/// Rigid world→camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a pose from a raw matrix after checking it is a proper rotation.
    pub fn from_matrix(m: Matrix3<f64>, translation: Vec3) -> Result<Self, GeomError> {
        let should_be_identity = m.transpose() * m;
        if (should_be_identity - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(GeomError::InvalidCamera("rotation is not orthonormal"));
        }
        if (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeomError::InvalidCamera("rotation determinant is not +1"));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeomError::InvalidCamera("translation is not finite"));
        }
        Ok(Self { rotation: Rotation3::from_matrix_unchecked(m), translation })
    }

    /// Camera placed at `center` (world) looking toward `target`, with `down`
    /// giving the approximate image `v` direction.
    pub fn look_at(center: Point3, target: Point3, down: Vec3) -> Result<Self, GeomError> {
        let z = (target - center).try_normalize(1e-15).ok_or(GeomError::ZeroVector)?;
        let x = down.cross(&z).try_normalize(1e-12).ok_or(GeomError::ZeroVector)?;
        let y = z.cross(&x);
        // rows of R are the camera axes expressed in world coordinates
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation3::from_matrix_unchecked(r);
        let translation = -(rotation * center.coords);
        Ok(Self { rotation, translation })
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn to_world(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation.inverse() * (p.coords - self.translation))
    }

    pub fn dir_to_world(&self, d: &Vec3) -> Vec3 {
        self.rotation.inverse() * d
    }

    pub fn dir_to_camera(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }
}

/// Pinhole intrinsics plus the world→camera pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, pose: Pose) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeomError::InvalidCamera("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeomError::InvalidCamera("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy, pose })
    }

    /// Camera at the world origin with identity orientation.
    pub fn at_origin(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeomError> {
        Self::new(fx, fy, cx, cy, Pose::identity())
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a world point.
    pub fn project_world(&self, p: &Point3) -> Result<Pixel, GeomError> {
        project(&self.pose.to_camera(p), self)
    }

    /// Unit ray in world coordinates from the optical center through `px`.
    pub fn pixel_ray(&self, px: &Pixel) -> Ray {
        let d = backproject(px, self).coords;
        Ray::new(self.pose.center(), self.pose.dir_to_world(&d)).expect("backprojected direction is non-zero")
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major world→camera rotation.
    #[serde(default = "identity_rows")]
    rotation: [[f64; 3]; 3],
    #[serde(default)]
    translation: [f64; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = GeomError;

    fn try_from(j: CameraJson) -> Result<Self, Self::Error> {
        let r = j.rotation;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        let pose = Pose::from_matrix(m, Vec3::from(j.translation))?;
        CameraModel::new(j.fx, j.fy, j.cx, j.cy, pose)
    }
}

impl From<CameraModel> for CameraJson {
    fn from(c: CameraModel) -> Self {
        let m = c.pose.rotation.matrix();
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        let t = c.pose.translation;
        Self { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, rotation, translation: [t.x, t.y, t.z] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub dir: UnitVec3,
}

impl Ray {
    pub fn new(origin: Point3, dir: Vec3) -> Result<Self, GeomError> {
        let dir = Unit::try_new(dir, 1e-15).ok_or(GeomError::ZeroVector)?;
        Ok(Self { origin, dir })
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir.into_inner() * t
    }
}

/// Plane `{x : normal·x = offset}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlaneJson", into = "PlaneJson")]
pub struct Plane {
    pub normal: UnitVec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeomError> {
        let normal = Unit::try_new(normal, 1e-15).ok_or(GeomError::ZeroVector)?;
        Ok(Self { normal, offset })
    }

    pub fn through(point: &Point3, normal: Vec3) -> Result<Self, GeomError> {
        let n = Unit::try_new(normal, 1e-15).ok_or(GeomError::ZeroVector)?;
        Ok(Self { normal: n, offset: n.dot(&point.coords) })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    /// Orthonormal in-plane frame `(origin, e1, e2)`. `e1` follows the world
    /// x-axis projected into the plane where possible.
    pub fn frame(&self) -> (Point3, Vec3, Vec3) {
        let n = self.normal.into_inner();
        let origin = Point3::from(n * self.offset);
        let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        (origin, e1, e2)
    }
}

#[derive(Serialize, Deserialize)]
struct PlaneJson {
    normal: [f64; 3],
    offset: f64,
}

impl TryFrom<PlaneJson> for Plane {
    type Error = GeomError;
    fn try_from(j: PlaneJson) -> Result<Self, Self::Error> {
        Plane::new(Vec3::from(j.normal), j.offset)
    }
}

impl From<Plane> for PlaneJson {
    fn from(p: Plane) -> Self {
        Self { normal: [p.normal.x, p.normal.y, p.normal.z], offset: p.offset }
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(p: &Point3, cam: &CameraModel) -> Result<Pixel, GeomError> {
    if !(p.z > EPS_DEPTH) {
        return Err(GeomError::NonPositiveDepth(p.z));
    }
    Ok(Pixel { u: cam.fx * p.x / p.z + cam.cx, v: cam.fy * p.y / p.z + cam.cy })
}

/// Back-projects a pixel onto the camera-frame plane `z = 1`.
pub fn backproject(px: &Pixel, cam: &CameraModel) -> Point3 {
    Point3::new((px.u - cam.cx) / cam.fx, (px.v - cam.cy) / cam.fy, 1.0)
}

/// Normal of the plane spanned by the pupil and glint directions.
pub fn plane_normal(p: &UnitVec3, g: &UnitVec3) -> Result<UnitVec3, GeomError> {
    let c = p.cross(g);
    if c.norm() <= EPS_PARALLEL {
        return Err(GeomError::DegenerateDirections);
    }
    Ok(Unit::new_normalize(c))
}

/// Direction of the line where two planes meet, oriented so that it has a
/// positive component along `forward`.
pub fn optical_axis_direction(n1: &UnitVec3, n2: &UnitVec3, forward: &Vec3) -> Result<UnitVec3, GeomError> {
    let c = n1.cross(n2);
    if c.norm() <= EPS_PARALLEL {
        return Err(GeomError::ParallelPlanes);
    }
    let d = c.normalize();
    Ok(Unit::new_unchecked(if d.dot(forward) < 0.0 { -d } else { d }))
}

/// Midpoint of the common perpendicular between two lines, and its length.
pub fn triangulate_rays(r1: &Ray, r2: &Ray) -> Result<(Point3, f64), GeomError> {
    let d1 = r1.dir.into_inner();
    let d2 = r2.dir.into_inner();
    let cross = d1.cross(&d2);
    let denom = cross.norm_squared();
    if cross.norm() <= EPS_PARALLEL {
        return Err(GeomError::ParallelRays);
    }
    let w = r2.origin - r1.origin;
    let t1 = w.cross(&d2).dot(&cross) / denom;
    let t2 = w.cross(&d1).dot(&cross) / denom;
    let a = r1.at(t1);
    let b = r2.at(t2);
    let mid = Point3::from((a.coords + b.coords) * 0.5);
    Ok((mid, (a - b).norm()))
}

pub fn intersect_ray_plane(r: &Ray, pl: &Plane) -> Result<Point3, GeomError> {
    let denom = r.dir.dot(&pl.normal);
    if denom.abs() <= EPS_PARALLEL {
        return Err(GeomError::ParallelToPlane);
    }
    let t = (pl.offset - pl.normal.dot(&r.origin.coords)) / denom;
    if t < 0.0 {
        return Err(GeomError::BehindOrigin(t));
    }
    Ok(r.at(t))
}

/// Angle between two directions in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    a.cross(b).norm().atan2(a.dot(b))
}
