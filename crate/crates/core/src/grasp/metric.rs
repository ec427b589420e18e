//! Rectangle overlap metric and the grasp success criterion.

use std::f64::consts::PI;

use super::{GraspError, GraspRectangle};
use crate::geom::Pixel;

/// Largest allowed orientation error of a successful grasp.
pub const MAX_ANGLE_ERROR: f64 = PI / 6.0;
/// Jaccard index a successful grasp must strictly exceed.
pub const MIN_JACCARD: f64 = 0.25;
/// Slack on the inclusive angle test so that a nominal 30° offset survives
/// rounding in the angle arithmetic.
const ANGLE_SLACK: f64 = 1e-9;

/// Orientation difference modulo π (parallel-jaw symmetry), in `[0, π/2]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Shoelace area; positive for counter-clockwise order in a y-up frame.
pub fn polygon_area(poly: &[Pixel]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        p.u * q.v - q.u * p.v
    }).sum::<f64>() / 2.0
}

/// Clips `subject` against every edge of the convex `clip` polygon
/// (Sutherland–Hodgman). Both polygons must share the same winding.
pub fn clip_convex(subject: &[Pixel], clip: &[Pixel]) -> Vec<Pixel> {
    let orientation = polygon_area(clip).signum();
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: &Pixel| orientation * ((b.u - a.u) * (p.v - a.v) - (b.v - a.v) * (p.u - a.u));
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(&cur), side(&prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: Pixel, q: Pixel, sp: f64, sq: f64) -> Pixel {
    let t = sp / (sp - sq);
    Pixel::new(p.u + t * (q.u - p.u), p.v + t * (q.v - p.v))
}

/// Intersection over union of two oriented rectangles.
pub fn jaccard(a: &GraspRectangle, b: &GraspRectangle) -> f64 {
    let pa = a.corners();
    let pb = b.corners();
    let inter = polygon_area(&clip_convex(&pa, &pb)).abs();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// True when some ground truth is within 30° (inclusive) and overlaps with a
/// Jaccard index strictly above 0.25.
pub fn is_success(pred: &GraspRectangle, truths: &[GraspRectangle]) -> Result<bool, GraspError> {
    if truths.is_empty() {
        return Err(GraspError::NoGroundTruth);
    }
    Ok(truths.iter().any(|t| {
        angle_difference(pred.theta, t.theta) <= MAX_ANGLE_ERROR + ANGLE_SLACK && jaccard(pred, t) > MIN_JACCARD
    }))
}
