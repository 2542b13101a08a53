//! Data-augmentation pipeline for few-shot species identification from
//! images: rotation, generated-sample ingestion, PCA/CTV reduction, SMOTE,
//! a squared-hinge linear SVM and a repeated stratified cross-validation
//! harness.

pub mod augment;
pub mod classify;
pub mod dataset;
pub mod evaluate;
pub mod explain;
pub mod features;
pub mod linalg;
pub mod oversample;
pub mod pipeline;
pub mod raster;
pub mod reduce;
pub mod rng;

pub use dataset::{DatasetManifest, Provenance, ProvenanceKind, SampleLabel, SampleRecord};
pub use evaluate::EvalReport;
pub use features::{FeatureMaps, FeatureTable, FeatureVector};
pub use linalg::Matrix;
pub use raster::RasterImage;
pub use reduce::{PcaModel, CTV_GRID};
