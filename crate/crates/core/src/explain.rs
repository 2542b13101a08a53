//! Class activation maps.
//!
//! A CAM is the class-weighted sum of the extractor's feature maps. For a
//! classifier trained on PCA scores the per-channel weights are recovered by
//! mapping the SVM weights back through the standardizer and the retained
//! PCA components (see [`channel_weights`]).
//!
//! Colormap breakpoints, linear in between:
//!
//! | value | color  | RGB           |
//! |-------|--------|---------------|
//! | 0     | blue   | (0, 0, 1)     |
//! | 1/3   | green  | (0, 1, 0)     |
//! | 2/3   | orange | (1, 0.5, 0)   |
//! | 1     | red    | (1, 0, 0)     |

use thiserror::Error;

use crate::classify::SvmModel;
use crate::features::FeatureMaps;
use crate::raster::RasterImage;
use crate::reduce::PcaModel;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid alpha {0}; expected a value in [0, 1]")]
    Alpha(f64),
}

/// A `height x width` grid of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ExplainError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(ExplainError::Shape(format!("{} values for a {width}x{height} map", values.len())));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// A map min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(ScalarMap);

impl Heatmap {
    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }
}

/// `raw(y, x) = sum_c weights[c] * maps[c](y, x)`.
pub fn compute_cam(maps: &FeatureMaps, weights: &[f64]) -> Result<ScalarMap, ExplainError> {
    if weights.len() != maps.channels() {
        return Err(ExplainError::Shape(format!(
            "{} weights for {} feature maps",
            weights.len(),
            maps.channels()
        )));
    }
    let mut values = vec![0.0; maps.height() * maps.width()];
    for (c, &w) in weights.iter().enumerate() {
        crate::linalg::axpy(w, maps.map(c), &mut values);
    }
    ScalarMap::new(maps.width(), maps.height(), values)
}

/// Bilinear resize with corner-aligned sampling: output pixel `(x, y)` reads
/// the source at `(x (w-1)/(tw-1), y (h-1)/(th-1))`.
pub fn upscale_bilinear(raw: &ScalarMap, target_w: usize, target_h: usize) -> Result<ScalarMap, ExplainError> {
    if target_w < raw.width || target_h < raw.height {
        return Err(ExplainError::Shape(format!(
            "target {target_w}x{target_h} is smaller than the {}x{} source",
            raw.width, raw.height
        )));
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let p = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (p.floor() as usize).min(src - 2);
        (lo, lo + 1, p - lo as f64)
    };
    let cols: Vec<_> = (0..target_w).map(|x| coord(x, raw.width, target_w)).collect();
    let mut values = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let (y0, y1, fy) = coord(y, raw.height, target_h);
        for &(x0, x1, fx) in &cols {
            let top = lerp(raw.get(x0, y0), raw.get(x1, y0), fx);
            let bottom = lerp(raw.get(x0, y1), raw.get(x1, y1), fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    ScalarMap::new(target_w, target_h, values)
}

/// Exact for `a == b` and never outside `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

/// Min-max normalization; a constant map becomes all zeros.
pub fn normalize(raw: &ScalarMap) -> Heatmap {
    let (lo, hi) = (raw.min(), raw.max());
    let span = hi - lo;
    let values = raw
        .values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Heatmap(ScalarMap {
        width: raw.width,
        height: raw.height,
        values,
    })
}

const STOPS: [[f64; 3]; 4] = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.5, 0.0], [1.0, 0.0, 0.0]];

/// Color of a normalized value (clamped to `[0, 1]`).
pub fn colormap(v: f64) -> [f64; 3] {
    let p = v.clamp(0.0, 1.0) * 3.0;
    let seg = (p.floor() as usize).min(2);
    let t = p - seg as f64;
    let (a, b) = (STOPS[seg], STOPS[seg + 1]);
    [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]))
}

/// Blends the colored heatmap over the grayscale image:
/// `(1 - alpha) * gray + alpha * color`, as an RGB image.
pub fn render_overlay(img: &RasterImage, hm: &Heatmap, alpha: f64) -> Result<RasterImage, ExplainError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ExplainError::Alpha(alpha));
    }
    if img.width() != hm.width() || img.height() != hm.height() {
        return Err(ExplainError::Shape(format!(
            "{}x{} heatmap over a {}x{} image",
            hm.width(),
            hm.height(),
            img.width(),
            img.height()
        )));
    }
    let gray = img.to_gray();
    let mut pixels = Vec::with_capacity(3 * gray.pixels().len());
    for (g, v) in gray.pixels().iter().zip(hm.values()) {
        let color = colormap(*v);
        pixels.extend(color.iter().map(|c| (1.0 - alpha) * g + alpha * c));
    }
    RasterImage::new(img.width(), img.height(), 3, pixels).map_err(|e| ExplainError::Shape(e.to_string()))
}

/// Per-channel CAM weights of class `class_index` for an SVM trained on the
/// leading `svm.dims()` PCA scores: `sum_k (w_k / sigma_k) * component_k`.
pub fn channel_weights(pca: &PcaModel, svm: &SvmModel, class_index: usize) -> Result<Vec<f64>, ExplainError> {
    let (w, _) = svm.effective_weights(class_index);
    pca.back_project(&w).map_err(|e| ExplainError::Shape(e.to_string()))
}

/// Full chain: CAM, upscale to the image size, normalize.
pub fn heatmap_for(maps: &FeatureMaps, weights: &[f64], width: usize, height: usize) -> Result<Heatmap, ExplainError> {
    let raw = compute_cam(maps, weights)?;
    Ok(normalize(&upscale_bilinear(&raw, width, height)?))
}
