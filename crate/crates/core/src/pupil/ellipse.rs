//! Ellipse representation and the direct least-squares conic fit.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PupilError;
use crate::geom::Pixel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Pixel,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis from the image x-axis, in `[0, π)`.
    pub tilt: f64,
}

/// General conic `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic(pub [f64; 6]);

impl Conic {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, f] = self.0;
        a * x * x + b * x * y + c * y * y + d * x + e * y + f
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, _] = self.0;
        (2.0 * a * x + b * y + d, b * x + 2.0 * c * y + e)
    }

    /// Symmetric 3×3 form `xᵀ Q x` in homogeneous coordinates.
    pub fn matrix(&self) -> Matrix3<f64> {
        let [a, b, c, d, e, f] = self.0;
        Matrix3::new(a, b / 2.0, d / 2.0, b / 2.0, c, e / 2.0, d / 2.0, e / 2.0, f)
    }

    pub fn from_matrix(q: &Matrix3<f64>) -> Self {
        let q = (q + q.transpose()) * 0.5;
        Conic([q[(0, 0)], 2.0 * q[(0, 1)], q[(1, 1)], 2.0 * q[(0, 2)], 2.0 * q[(1, 2)], q[(2, 2)]])
    }

    /// First-order geometric distance from a point to the curve.
    pub fn sampson_distance(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = self.gradient(x, y);
        let g = gx.hypot(gy);
        if g == 0.0 {
            return f64::INFINITY;
        }
        self.eval(x, y) / g
    }

    pub fn to_ellipse(&self) -> Option<Ellipse> {
        let [mut a, mut b, mut c, mut d, mut e, mut f] = self.0;
        if a + c < 0.0 {
            (a, b, c, d, e, f) = (-a, -b, -c, -d, -e, -f);
        }
        let disc = 4.0 * a * c - b * b;
        if !(disc > 0.0) {
            return None;
        }
        let x0 = (b * e - 2.0 * c * d) / disc;
        let y0 = (b * d - 2.0 * a * e) / disc;
        let f0 = f + (d * x0 + e * y0) / 2.0;
        if !(f0 < 0.0) {
            return None;
        }
        let mean = (a + c) / 2.0;
        let rad = (((a - c) / 2.0).powi(2) + (b / 2.0).powi(2)).sqrt();
        let (l_small, l_big) = (mean - rad, mean + rad);
        if !(l_small > 0.0) {
            return None;
        }
        let semi_major = (-f0 / l_small).sqrt();
        let semi_minor = (-f0 / l_big).sqrt();
        // the quadratic form is largest along phi, so the major axis is perpendicular
        let phi = 0.5 * b.atan2(a - c);
        let tilt = (phi + PI / 2.0).rem_euclid(PI);
        let ellipse = Ellipse { center: Pixel::new(x0, y0), semi_major, semi_minor, tilt };
        ellipse.is_finite().then_some(ellipse)
    }
}

impl Ellipse {
    pub fn new(center: Pixel, a: f64, b: f64, tilt: f64) -> Self {
        let (semi_major, semi_minor, tilt) = if a >= b { (a, b, tilt) } else { (b, a, tilt + PI / 2.0) };
        Self { center, semi_major, semi_minor, tilt: tilt.rem_euclid(PI) }
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite() && self.semi_major.is_finite() && self.semi_minor.is_finite() && self.tilt.is_finite()
    }

    pub fn point_at(&self, t: f64) -> Pixel {
        let (s, c) = self.tilt.sin_cos();
        let (x, y) = (self.semi_major * t.cos(), self.semi_minor * t.sin());
        Pixel::new(self.center.u + c * x - s * y, self.center.v + s * x + c * y)
    }

    /// `(x/a)² + (y/b)²` in the ellipse frame: below 1 inside, 1 on the curve.
    pub fn normalized_radius_sq(&self, u: f64, v: f64) -> f64 {
        let (s, c) = self.tilt.sin_cos();
        let (dx, dy) = (u - self.center.u, v - self.center.v);
        let x = c * dx + s * dy;
        let y = -s * dx + c * dy;
        (x / self.semi_major).powi(2) + (y / self.semi_minor).powi(2)
    }

    pub fn conic(&self) -> Conic {
        let (s, c) = self.tilt.sin_cos();
        let (a2, b2) = (self.semi_major.powi(2), self.semi_minor.powi(2));
        let qa = c * c / a2 + s * s / b2;
        let qb = 2.0 * c * s * (1.0 / a2 - 1.0 / b2);
        let qc = s * s / a2 + c * c / b2;
        let (x0, y0) = (self.center.u, self.center.v);
        let qd = -2.0 * qa * x0 - qb * y0;
        let qe = -qb * x0 - 2.0 * qc * y0;
        let qf = qa * x0 * x0 + qb * x0 * y0 + qc * y0 * y0 - 1.0;
        Conic([qa, qb, qc, qd, qe, qf])
    }
}

/// Direct least-squares ellipse fit (Fitzgibbon's ellipse-specific
/// constraint, solved with the Halíř–Flusser block decomposition).
pub fn fit_ellipse(points: &[Pixel]) -> Result<Ellipse, PupilError> {
    fit_conic(points)?.to_ellipse().ok_or(PupilError::DegenerateConfiguration)
}

/// Fits once, drops points further than `max_residual` px from the curve,
/// and refits if anything was dropped and at least five points remain.
pub fn fit_ellipse_trimmed(points: &[Pixel], max_residual: f64) -> Result<Ellipse, PupilError> {
    let conic = fit_conic(points)?;
    let kept: Vec<Pixel> =
        points.iter().copied().filter(|p| conic.sampson_distance(p.u, p.v).abs() <= max_residual).collect();
    if kept.len() == points.len() || kept.len() < 5 {
        return conic.to_ellipse().ok_or(PupilError::DegenerateConfiguration);
    }
    fit_ellipse(&kept)
}

pub fn fit_conic(points: &[Pixel]) -> Result<Conic, PupilError> {
    if points.len() < 5 {
        return Err(PupilError::TooFewPoints(points.len()));
    }
    // conditioning: centroid at origin, mean distance √2
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.u).sum::<f64>() / n;
    let my = points.iter().map(|p| p.v).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| (p.u - mx).hypot(p.v - my)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(PupilError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p.u - mx) * s, (p.v - my) * s);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(PupilError::DegenerateConfiguration)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&reduced) {
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda)) else { continue };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 {
            // several admissible vectors only arise from noise; keep the smallest eigenvalue
            if best.as_ref().is_none_or(|(l, _)| lambda.abs() < l.abs()) {
                best = Some((lambda, v / constraint.sqrt()));
            }
        }
    }
    let (_, a1) = best.ok_or(PupilError::DegenerateConfiguration)?;
    let a2 = t * a1;
    let [a, b, c] = [a1[0], a1[1], a1[2]];
    let [d, e, f] = [a2[0], a2[1], a2[2]];

    // undo the conditioning: x' = s (x - mx)
    let q_norm = Conic([a, b, c, d, e, f]).matrix();
    let h = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let q = h.transpose() * q_norm * h;
    let conic = Conic::from_matrix(&q);
    if conic.0.iter().any(|v| !v.is_finite()) {
        return Err(PupilError::DegenerateConfiguration);
    }
    Ok(conic)
}

fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    // characteristic polynomial λ³ - tr λ² + c1 λ - det
    let tr = m.trace();
    let c1 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.determinant();
    let mut roots = solve_cubic(-tr, c1, -det);
    // polish each root with a couple of Newton steps
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let p = ((*r - tr) * *r + c1) * *r - det;
            let dp = (3.0 * *r - 2.0 * tr) * *r + c1;
            if dp.abs() > 1e-300 {
                *r -= p / dp;
            }
        }
    }
    roots
}

/// Real roots of `x³ + a x² + b x + c`.
fn solve_cubic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    if r * r < q * q * q {
        let theta = (r / q.powf(1.5)).clamp(-1.0, 1.0).acos();
        let sq = -2.0 * q.sqrt();
        (0..3).map(|k| sq * ((theta + 2.0 * PI * k as f64) / 3.0).cos() - a / 3.0).collect()
    } else {
        let big_a = -r.signum() * (r.abs() + (r * r - q * q * q).sqrt()).cbrt();
        let big_b = if big_a != 0.0 { q / big_a } else { 0.0 };
        vec![big_a + big_b - a / 3.0]
    }
}

/// Unit vector spanning the (numerical) null space of a rank-2 matrix.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(v_t.row(idx).transpose())
}
