//! Feature-extraction boundary.
//!
//! Extractors produce [`FeatureMaps`] (C maps of H x W); global average
//! pooling turns them into a C-dimensional [`FeatureVector`]. Externally
//! computed descriptors enter through the `.fvec` format in [`fvec`].

mod fvec;
mod mock;

pub use fvec::{read_feature_csv, read_feature_table, write_feature_csv, write_feature_table, FVEC_MAGIC};
pub use mock::{mock_extract, StatSet};

use std::collections::HashSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{Provenance, SampleLabel};
use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature maps: {0}")]
    Maps(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("feature table error: {0}")]
    Table(String),
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("data error in {path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// `channels` activation maps of `height x width`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, FeatureError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(FeatureError::Maps(format!("empty shape {channels}x{height}x{width}")));
        }
        if values.len() != channels * height * width {
            return Err(FeatureError::Maps(format!(
                "{} values for shape {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Maps("non-finite activation".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `height * width` values of channel `c`, row-major.
    pub fn map(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }
}

/// Global average pooling: one mean per channel.
pub fn global_average_pool(maps: &FeatureMaps) -> Vec<f64> {
    let n = (maps.height * maps.width) as f64;
    (0..maps.channels).map(|c| maps.map(c).iter().sum::<f64>() / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub sample_id: String,
    pub label: SampleLabel,
    pub provenance: Provenance,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(sample_id: impl Into<String>, label: SampleLabel, values: Vec<f64>) -> Self {
        Self {
            sample_id: sample_id.into(),
            label,
            provenance: Provenance::Original,
            values,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }
}

/// Rows of equal dimensionality with unique sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dims: usize,
    rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn new(dims: usize, rows: Vec<FeatureVector>) -> Result<Self, FeatureError> {
        let mut seen = HashSet::with_capacity(rows.len());
        for r in &rows {
            if r.values.len() != dims {
                return Err(FeatureError::Table(format!(
                    "row {:?} has {} values, table dims {dims}",
                    r.sample_id,
                    r.values.len()
                )));
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::Table(format!("row {:?} has a non-finite value", r.sample_id)));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(FeatureError::Table(format!("duplicate sample_id {:?}", r.sample_id)));
            }
        }
        Ok(Self { dims, rows })
    }

    /// Table with dims taken from the first row.
    pub fn from_rows(rows: Vec<FeatureVector>) -> Result<Self, FeatureError> {
        let dims = rows
            .first()
            .map(|r| r.dims())
            .ok_or_else(|| FeatureError::Table("no rows".into()))?;
        Self::new(dims, rows)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<FeatureVector> {
        self.rows
    }

    pub fn find(&self, sample_id: &str) -> Option<&FeatureVector> {
        self.rows.iter().find(|r| r.sample_id == sample_id)
    }

    /// Dense row-major copy of the values.
    pub fn matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.rows.len() * self.dims);
        for r in &self.rows {
            data.extend_from_slice(&r.values);
        }
        Matrix::from_vec(self.rows.len(), self.dims, data)
    }

    pub fn species_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label.species_id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pooling_reduces_by_factor_49() {
        let maps = FeatureMaps::new(512, 7, 7, (0..512 * 49).map(|i| (i % 17) as f64).collect()).unwrap();
        let v = global_average_pool(&maps);
        assert_eq!(v.len(), 512);
        assert_eq!(maps.values().len() / v.len(), 49);
    }

    #[test]
    fn pooling_constant_and_small_cases() {
        let maps = FeatureMaps::new(3, 4, 5, vec![2.5; 60]).unwrap();
        assert_eq!(global_average_pool(&maps), vec![2.5; 3]);
        let one = FeatureMaps::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&one), vec![2.5]);
    }

    #[test]
    fn invalid_maps_rejected() {
        assert!(FeatureMaps::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureMaps::new(1, 1, 2, vec![1.0]).is_err());
        assert!(FeatureMaps::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn table_validation() {
        let l = SampleLabel::new(0, "a");
        let ok = FeatureTable::new(2, vec![FeatureVector::new("x", l.clone(), vec![1.0, 2.0])]);
        assert!(ok.is_ok());
        let ragged = FeatureTable::new(2, vec![FeatureVector::new("x", l.clone(), vec![1.0])]);
        assert!(ragged.is_err());
        let dup = FeatureTable::new(
            1,
            vec![
                FeatureVector::new("x", l.clone(), vec![1.0]),
                FeatureVector::new("x", l, vec![2.0]),
            ],
        );
        assert!(dup.is_err());
    }

    fn maps_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
        (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
            let n = c * h * w;
            (
                Just(c),
                Just(h),
                Just(w),
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn pooling_is_linear((c, h, w, a, b) in maps_strategy(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let ma = FeatureMaps::new(c, h, w, a.clone()).unwrap();
            let mb = FeatureMaps::new(c, h, w, b.clone()).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let mc = FeatureMaps::new(c, h, w, combo).unwrap();
            let pa = global_average_pool(&ma);
            let pb = global_average_pool(&mb);
            let pc = global_average_pool(&mc);
            for i in 0..c {
                let expected = alpha * pa[i] + beta * pb[i];
                let scale = alpha.abs() * 100.0 + beta.abs() * 100.0 + 1.0;
                prop_assert!((pc[i] - expected).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn pooling_within_channel_bounds((c, h, w, a, _b) in maps_strategy()) {
            let m = FeatureMaps::new(c, h, w, a).unwrap();
            let p = global_average_pool(&m);
            for ch in 0..c {
                let lo = m.map(ch).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = m.map(ch).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p[ch] >= lo - 1e-12 && p[ch] <= hi + 1e-12);
            }
        }
    }
}
