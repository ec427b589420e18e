//! Cornell grasp rectangle files: four `x y` vertex lines per rectangle, the
//! first edge running along the gripper closing direction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metric::{clip_convex, polygon_area};
use super::{GraspError, GraspRectangle, RectangleJson};
use crate::geom::Pixel;

/// Side of the square center crop used for evaluation.
pub const DEFAULT_CROP: usize = 224;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub rects: Vec<GraspRectangle>,
    /// Subtracted from source coordinates to land in the crop.
    pub crop_offset: (f64, f64),
    pub crop: usize,
}

impl Annotation {
    pub fn to_json(&self) -> AnnotationJson {
        AnnotationJson {
            image_id: self.image_id.clone(),
            crop_offset: [self.crop_offset.0, self.crop_offset.1],
            crop: self.crop,
            rectangles: self.rects.iter().map(GraspRectangle::to_json).collect(),
        }
    }
}

/// JSON export of an [`Annotation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationJson {
    pub image_id: String,
    pub crop_offset: [f64; 2],
    pub crop: usize,
    pub rectangles: Vec<RectangleJson>,
}

/// Offset of a centered `crop`×`crop` window inside an image.
pub fn center_crop_offset(image_size: (usize, usize), crop: usize) -> (f64, f64) {
    let half = |side: usize| ((side as f64 - crop as f64) / 2.0).floor().max(0.0);
    (half(image_size.0), half(image_size.1))
}

/// Parses a rectangle file and moves the rectangles into the center crop.
/// Rectangles with a non-finite vertex, zero-length sides, or no overlap with
/// the crop are skipped.
pub fn parse_cornell(rect_text: &str, image_size: (usize, usize), crop: usize) -> Result<Annotation, GraspError> {
    let mut vertices = Vec::new();
    for (lineno, line) in rect_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(GraspError::MalformedFile(format!("line {}: expected 2 numbers, got {}", lineno + 1, tokens.len())));
        }
        let parse = |t: &str| {
            t.parse::<f64>().map_err(|_| GraspError::MalformedFile(format!("line {}: bad number {t:?}", lineno + 1)))
        };
        vertices.push(Pixel::new(parse(tokens[0])?, parse(tokens[1])?));
    }
    if vertices.len() % 4 != 0 {
        return Err(GraspError::MalformedFile(format!("{} vertex lines is not a multiple of 4", vertices.len())));
    }

    let offset = center_crop_offset(image_size, crop);
    let c = crop as f64;
    // pixel-center convention: the crop spans [-0.5, crop - 0.5]
    let crop_poly = [Pixel::new(-0.5, -0.5), Pixel::new(c - 0.5, -0.5), Pixel::new(c - 0.5, c - 0.5), Pixel::new(-0.5, c - 0.5)];
    let mut rects = Vec::new();
    for quad in vertices.chunks_exact(4) {
        if !quad.iter().all(Pixel::is_finite) {
            continue;
        }
        let shifted: Vec<Pixel> = quad.iter().map(|p| Pixel::new(p.u - offset.0, p.v - offset.1)).collect();
        let Some(rect) = rectangle_from_vertices(&shifted) else { continue };
        let overlap = polygon_area(&clip_convex(&rect.corners(), &crop_poly)).abs();
        if overlap > 0.0 {
            rects.push(rect);
        }
    }
    Ok(Annotation { image_id: String::new(), rects, crop_offset: offset, crop })
}

/// Reads a `*cpos.txt` file next to a `*r.png` image of the given size.
pub fn load_cornell(path: &Path, image_size: (usize, usize), crop: usize) -> anyhow::Result<Annotation> {
    let text = std::fs::read_to_string(path)?;
    let mut ann = parse_cornell(&text, image_size, crop)?;
    ann.image_id = path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.trim_end_matches("cpos.txt").to_string())
        .unwrap_or_default();
    Ok(ann)
}

fn rectangle_from_vertices(v: &[Pixel]) -> Option<GraspRectangle> {
    let center = Pixel::new(v.iter().map(|p| p.u).sum::<f64>() / 4.0, v.iter().map(|p| p.v).sum::<f64>() / 4.0);
    let (dx, dy) = (v[1].u - v[0].u, v[1].v - v[0].v);
    let width = dx.hypot(dy);
    let height = v[2].dist(&v[1]);
    GraspRectangle::new(center, dy.atan2(dx), width, height).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "253 319.7\n309 324\n307 350\n251 345.7\n\n200 200\n200 240\n220 240\n220 200\n";

    #[test]
    fn parses_two_rectangles() {
        let a = parse_cornell(TWO, (640, 480), 224).unwrap();
        assert_eq!(a.rects.len(), 2);
        assert_eq!(a.crop_offset, (208.0, 128.0));
        let r = a.rects[0];
        assert!((r.center.u - (280.0 - 208.0)).abs() < 1e-9);
        assert!((r.center.v - (334.85 - 128.0)).abs() < 1e-9);
        assert!((r.width - (56f64).hypot(4.3)).abs() < 1e-9);
        // second rectangle closes along +v
        assert!((a.rects[1].theta.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(a.rects[1].width, 40.0);
        assert_eq!(a.rects[1].height, 20.0);
    }

    #[test]
    fn skips_nan_rectangle() {
        let text = format!("{TWO}NaN NaN\n1 2\n3 4\n5 6\n");
        let a = parse_cornell(&text, (640, 480), 224).unwrap();
        assert_eq!(a.rects.len(), 2);
    }

    #[test]
    fn drops_rectangles_outside_crop() {
        let text = "0 0\n10 0\n10 5\n0 5\n";
        let a = parse_cornell(text, (640, 480), 224).unwrap();
        assert!(a.rects.is_empty());
    }

    #[test]
    fn malformed_files() {
        let seven = "1 2\n".repeat(7);
        assert!(matches!(parse_cornell(&seven, (640, 480), 224), Err(GraspError::MalformedFile(_))));
        assert!(matches!(parse_cornell("1 2 3\n", (640, 480), 224), Err(GraspError::MalformedFile(_))));
        assert!(matches!(parse_cornell("1 x\n", (640, 480), 224), Err(GraspError::MalformedFile(_))));
    }

    #[test]
    fn json_export_uses_degrees() {
        let a = parse_cornell(TWO, (640, 480), 224).unwrap();
        let j = serde_json::to_value(a.to_json()).unwrap();
        let theta = j["rectangles"][1]["theta_deg"].as_f64().unwrap();
        assert!((theta.abs() - 90.0).abs() < 1e-9);
    }
}
