//! Corneal reflection (glint) detection.

use crate::geom::Pixel;
use crate::raster::Grid;

/// Bright connected blob found above the saturation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GlintBlob {
    pub centroid: Pixel,
    pub area: usize,
    /// Radius of a disc with the same area.
    pub radius: f64,
}

/// Intensity-weighted centroid of the largest 8-connected component with
/// intensity `>= threshold`, or `None` when no pixel qualifies.
pub fn detect_glint(image: &Grid, threshold: f64) -> Option<Pixel> {
    largest_blob(image, threshold).map(|b| b.centroid)
}

pub fn largest_blob(image: &Grid, threshold: f64) -> Option<GlintBlob> {
    let (w, h) = (image.width, image.height);
    let mut label = vec![false; w * h];
    let mut best: Option<Vec<usize>> = None;
    for start in 0..w * h {
        if label[start] || image.data[start] < threshold {
            continue;
        }
        let mut component = Vec::new();
        let mut stack = vec![start];
        label[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !label[j] && image.data[j] >= threshold {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        // strictly larger keeps the first component found on ties
        if best.as_ref().is_none_or(|b| component.len() > b.len()) {
            best = Some(component);
        }
    }
    let component = best?;
    let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
    for &i in &component {
        let v = image.data[i];
        sw += v;
        su += v * (i % w) as f64;
        sv += v * (i / w) as f64;
    }
    let area = component.len();
    Some(GlintBlob {
        centroid: Pixel::new(su / sw, sv / sw),
        area,
        radius: (area as f64 / std::f64::consts::PI).sqrt(),
    })
}

/// Background-subtracted centroid in a square window around a coarse glint,
/// which also accounts for the partially covered rim pixels the thresholded
/// component leaves out. The background level is the median of the window
/// border.
pub fn refine_glint(image: &Grid, coarse: Pixel, half_window: usize) -> Pixel {
    let cx = coarse.u.round() as isize;
    let cy = coarse.v.round() as isize;
    let r = half_window as isize;
    let mut border = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx.abs() == r || dy.abs() == r {
                border.push(image.get_clamped(cx + dx, cy + dy));
            }
        }
    }
    border.sort_by(f64::total_cmp);
    let bg = border[border.len() / 2];
    let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
    for dy in -(r - 1)..r {
        for dx in -(r - 1)..r {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= image.width as isize || y >= image.height as isize {
                continue;
            }
            let wgt = (image.get(x as usize, y as usize) - bg).max(0.0);
            sw += wgt;
            su += wgt * x as f64;
            sv += wgt * y as f64;
        }
    }
    if sw > 0.0 {
        Pixel::new(su / sw, sv / sw)
    } else {
        coarse
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_blob_centroid() {
        let mut g = Grid::filled(80, 80, 100.0);
        for y in 39..=41 {
            for x in 39..=41 {
                g.set(x, y, 255.0);
            }
        }
        assert_eq!(detect_glint(&g, 240.0), Some(Pixel::new(40.0, 40.0)));
    }

    #[test]
    fn nothing_above_threshold() {
        assert_eq!(detect_glint(&Grid::filled(20, 20, 239.0), 240.0), None);
    }

    #[test]
    fn largest_component_wins() {
        let mut g = Grid::filled(50, 50, 0.0);
        g.set(5, 5, 255.0);
        for y in 30..33 {
            for x in 20..24 {
                g.set(x, y, 250.0);
            }
        }
        let b = largest_blob(&g, 240.0).unwrap();
        assert_eq!(b.area, 12);
        assert_eq!(b.centroid, Pixel::new(21.5, 31.0));
    }
}
