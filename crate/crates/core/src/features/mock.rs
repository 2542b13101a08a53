//! Deterministic hand-crafted stand-in for a convolutional backbone.
//!
//! The image (converted to gray) is cut into a `grid x grid` lattice; cell row
//! `i` covers pixel rows `[i*h/grid, (i+1)*h/grid)` (integer division), columns
//! likewise. Per cell, in channel order:
//!
//! 0. mean intensity
//! 1. standard deviation (population)
//! 2. mean |gx|, 3. mean |gy|, with central differences and replicated borders
//! 4. to 7. oriented-edge energy: mean gradient magnitude falling in the
//!    orientation bins centered at 0, 45, 90 and 135 degrees (orientation
//!    taken modulo 180)

use super::{FeatureError, FeatureMaps};
use crate::raster::RasterImage;

/// Which per-cell statistics to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatSet {
    /// mean and standard deviation (2 maps)
    pub intensity: bool,
    /// horizontal and vertical gradient magnitudes (2 maps)
    pub gradients: bool,
    /// 4-bin oriented-edge histogram (4 maps)
    pub edges: bool,
}

impl Default for StatSet {
    fn default() -> Self {
        Self {
            intensity: true,
            gradients: true,
            edges: true,
        }
    }
}

impl StatSet {
    pub fn channels(&self) -> usize {
        2 * self.intensity as usize + 2 * self.gradients as usize + 4 * self.edges as usize
    }
}

pub fn mock_extract(img: &RasterImage, grid: usize, stats: StatSet) -> Result<FeatureMaps, FeatureError> {
    if grid == 0 {
        return Err(FeatureError::Geometry("grid must be at least 1".into()));
    }
    if stats.channels() == 0 {
        return Err(FeatureError::Geometry("no statistics selected".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w < grid || h < grid {
        return Err(FeatureError::Geometry(format!("{w}x{h} image is smaller than the {grid}x{grid} grid")));
    }
    let gray = img.to_gray();
    let px = |x: usize, y: usize| gray.get(x, y, 0);

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = 0.5 * (px((x + 1).min(w - 1), y) - px(x.saturating_sub(1), y));
            gy[y * w + x] = 0.5 * (px(x, (y + 1).min(h - 1)) - px(x, y.saturating_sub(1)));
        }
    }

    let k = stats.channels();
    let cells = grid * grid;
    let mut values = vec![0.0; k * cells];
    for cy in 0..grid {
        let (y0, y1) = (cy * h / grid, (cy + 1) * h / grid);
        for cx in 0..grid {
            let (x0, x1) = (cx * w / grid, (cx + 1) * w / grid);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += px(x, y);
                }
            }
            let mean = sum / n;
            let mut sum_sq = 0.0;
            let mut abs_gx = 0.0;
            let mut abs_gy = 0.0;
            let mut bins = [0.0f64; 4];
            for y in y0..y1 {
                for x in x0..x1 {
                    let dv = px(x, y) - mean;
                    sum_sq += dv * dv;
                    let (dx, dy) = (gx[y * w + x], gy[y * w + x]);
                    abs_gx += dx.abs();
                    abs_gy += dy.abs();
                    let mag = dx.hypot(dy);
                    if mag > 0.0 {
                        bins[orientation_bin(dx, dy)] += mag;
                    }
                }
            }
            let var = sum_sq / n;
            let mut cell_stats = Vec::with_capacity(k);
            if stats.intensity {
                cell_stats.extend([mean, var.sqrt()]);
            }
            if stats.gradients {
                cell_stats.extend([abs_gx / n, abs_gy / n]);
            }
            if stats.edges {
                cell_stats.extend(bins.iter().map(|b| b / n));
            }
            for (c, v) in cell_stats.into_iter().enumerate() {
                values[c * cells + cy * grid + cx] = v;
            }
        }
    }
    FeatureMaps::new(k, grid, grid, values)
}

fn orientation_bin(dx: f64, dy: f64) -> usize {
    use std::f64::consts::PI;
    let theta = dy.atan2(dx).rem_euclid(PI);
    (((theta + PI / 8.0) / (PI / 4.0)).floor() as usize) % 4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> RasterImage {
        RasterImage::from_fn_gray(w, h, |x, y| {
            0.5 + 0.3 * ((x as f64) * 0.21).sin() * ((y as f64) * 0.13 + 0.4).cos() + 0.1 * ((x * y) % 7) as f64 / 7.0
        })
    }

    #[test]
    fn constant_image_has_flat_mean_and_zero_edges() {
        let img = RasterImage::from_fn_gray(20, 20, |_, _| 0.3);
        let maps = mock_extract(&img, 4, StatSet::default()).unwrap();
        assert_eq!(maps.channels(), 8);
        assert!(maps.map(0).iter().all(|&v| (v - 0.3).abs() < 1e-12));
        for c in 1..8 {
            assert!(maps.map(c).iter().all(|&v| v.abs() < 1e-12), "channel {c}");
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = textured(64, 48);
        let a = mock_extract(&img, 7, StatSet::default()).unwrap();
        let b = mock_extract(&img, 7, StatSet::default()).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn too_small_image_is_geometry_error() {
        let img = textured(5, 10);
        assert!(matches!(mock_extract(&img, 7, StatSet::default()), Err(FeatureError::Geometry(_))));
        assert!(matches!(mock_extract(&img, 0, StatSet::default()), Err(FeatureError::Geometry(_))));
    }

    #[test]
    fn stat_selection_controls_channel_count() {
        let img = textured(16, 16);
        let only_intensity = StatSet { intensity: true, gradients: false, edges: false };
        assert_eq!(mock_extract(&img, 2, only_intensity).unwrap().channels(), 2);
        let full = mock_extract(&img, 2, StatSet::default()).unwrap();
        let part = mock_extract(&img, 2, only_intensity).unwrap();
        assert_eq!(full.map(0), part.map(0));
    }

    #[test]
    fn vertical_stripes_give_horizontal_gradients_only() {
        let img = RasterImage::from_fn_gray(16, 16, |x, _| if x % 4 < 2 { 0.0 } else { 1.0 });
        let maps = mock_extract(&img, 2, StatSet::default()).unwrap();
        assert!(maps.map(2).iter().all(|&v| v > 0.1));
        assert!(maps.map(3).iter().all(|&v| v.abs() < 1e-12));
        // all edge energy falls in the 0-degree bin
        assert!(maps.map(4).iter().all(|&v| v > 0.1));
        for c in 5..8 {
            assert!(maps.map(c).iter().all(|&v| v.abs() < 1e-12));
        }
    }
}
