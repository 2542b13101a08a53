//! In-memory raster images and PNG / binary PGM I/O.
//!
//! Grayscale conversion uses the fixed luma weights 0.299 R + 0.587 G + 0.114 B.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot write image {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

/// Row-major image with intensities in `[0, 1]`, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Invalid(format!("empty canvas {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::Invalid(format!("{channels} channels, expected 1 or 3")));
        }
        if pixels.len() != width * height * channels {
            return Err(RasterError::Invalid(format!(
                "{} values for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(RasterError::Invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds a grayscale image from `f(x, y)`; values are clamped to `[0, 1]`.
    pub fn from_fn_gray<F: FnMut(usize, usize) -> f64>(width: usize, height: usize, mut f: F) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]).clamp(0.0, 1.0))
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// Mean absolute per-value difference to another image of equal shape.
    pub fn mean_abs_diff(&self, other: &RasterImage) -> f64 {
        assert_eq!(
            (self.width, self.height, self.channels),
            (other.width, other.height, other.channels)
        );
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.pixels.len() as f64
    }

    /// Loads PNG or PGM; other color layouts are converted to gray or RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| RasterError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (channels, raw): (usize, Vec<f64>) = if img.color().has_color() {
            let rgb = img.to_rgb32f();
            (3, rgb.into_raw().into_iter().map(f64::from).collect())
        } else {
            let luma = img.to_luma32f();
            (1, luma.into_raw().into_iter().map(f64::from).collect())
        };
        let pixels = raw.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(img.width() as usize, img.height() as usize, channels, pixels)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| RasterError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes a binary (P5) PGM of the grayscale image.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        let gray = self.to_gray();
        let mut out = format!("P5\n{} {}\n255\n", gray.width, gray.height).into_bytes();
        out.extend(gray.to_bytes());
        std::fs::write(path, out).map_err(|e| RasterError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
