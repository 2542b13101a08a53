//! Rotation-only image augmentation.
//!
//! Size and (a)symmetry of the specimen are diagnostic, so the only
//! transformation offered is an in-canvas rotation of at most 20 degrees.
//! There is deliberately no zoom, shear, flip or color jitter here.

use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, Payload, Provenance, SampleRecord, MAX_ROTATION_DEG};
use crate::raster::RasterImage;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("rotation angle {0} degrees outside [-20, 20]")]
    AngleRange(f64),
    #[error("invalid rotation grid: {0}")]
    Grid(String),
    #[error("no rotation angles given")]
    NoAngles,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Intensity used for canvas regions uncovered by the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fill {
    /// Per-channel median of the outermost pixel ring.
    #[default]
    BorderMedian,
    Constant(f64),
}

/// Rotates `img` about its center by `angle_deg` (counterclockwise as
/// displayed) with bilinear resampling. The canvas size is unchanged.
pub fn rotate_image(img: &RasterImage, angle_deg: f64, fill: Fill) -> Result<RasterImage, AugmentError> {
    if !angle_deg.is_finite() || angle_deg.abs() > MAX_ROTATION_DEG {
        return Err(AugmentError::AngleRange(angle_deg));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let fill_values: Vec<f64> = match fill {
        Fill::BorderMedian => border_median(img),
        Fill::Constant(v) => vec![v.clamp(0.0, 1.0); ch],
    };
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    const EDGE: f64 = 1e-9;

    let mut out = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            if sx < -EDGE || sy < -EDGE || sx > max_x + EDGE || sy > max_y + EDGE {
                out.extend_from_slice(&fill_values);
                continue;
            }
            let sx = sx.clamp(0.0, max_x);
            let sy = sy.clamp(0.0, max_y);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for c in 0..ch {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(RasterImage::new(w, h, ch, out).expect("rotation preserves image validity"))
}

fn border_median(img: &RasterImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    (0..img.channels())
        .map(|c| {
            let mut ring: Vec<f64> = Vec::with_capacity(2 * (w + h));
            for x in 0..w {
                ring.push(img.get(x, 0, c));
                if h > 1 {
                    ring.push(img.get(x, h - 1, c));
                }
            }
            for y in 1..h.saturating_sub(1) {
                ring.push(img.get(0, y, c));
                if w > 1 {
                    ring.push(img.get(w - 1, y, c));
                }
            }
            ring.sort_by(f64::total_cmp);
            let n = ring.len();
            if n % 2 == 1 {
                ring[n / 2]
            } else {
                0.5 * (ring[n / 2 - 1] + ring[n / 2])
            }
        })
        .collect()
}

/// Symmetric rotation grid `{±step, ±2·step, …, ±max}` without 0, ascending.
pub fn rotation_set(max_deg: f64, step_deg: f64) -> Result<Vec<f64>, AugmentError> {
    if !(step_deg > 0.0) || !step_deg.is_finite() {
        return Err(AugmentError::Grid(format!("step {step_deg} must be positive")));
    }
    if !(max_deg >= step_deg) || max_deg > MAX_ROTATION_DEG {
        return Err(AugmentError::Grid(format!(
            "maximum {max_deg} must lie in [step, 20]"
        )));
    }
    let ratio = max_deg / step_deg;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 {
        return Err(AugmentError::Grid(format!("step {step_deg} does not divide {max_deg}")));
    }
    let n = n as i64;
    Ok((-n..=n).filter(|&i| i != 0).map(|i| i as f64 * step_deg).collect())
}

/// Sample id given to the rotation of `parent` by `angle_deg`.
pub fn rotated_id(parent: &str, angle_deg: f64) -> String {
    format!("{parent}@rot{angle_deg:+}")
}

/// Appends one derived rotated child per original record and angle.
///
/// Children follow all existing records, grouped by original in manifest
/// order with angles ascending.
pub fn augment_dataset(m: &DatasetManifest, angles: &[f64]) -> Result<DatasetManifest, AugmentError> {
    if angles.is_empty() {
        return Err(AugmentError::NoAngles);
    }
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    if let Some(&bad) = sorted.iter().find(|a| !a.is_finite() || a.abs() > MAX_ROTATION_DEG) {
        return Err(AugmentError::AngleRange(bad));
    }
    let children = m
        .records()
        .iter()
        .filter(|r| r.provenance == Provenance::Original)
        .flat_map(|r| {
            sorted.iter().map(move |&angle| SampleRecord {
                sample_id: rotated_id(&r.sample_id, angle),
                label: r.label.clone(),
                payload: Payload::Derived,
                provenance: Provenance::Rotated {
                    parent: r.sample_id.clone(),
                    angle_deg: angle,
                },
            })
        })
        .collect();
    Ok(m.extended(children)?)
}
