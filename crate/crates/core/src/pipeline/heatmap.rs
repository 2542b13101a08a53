//! Heatmap rendering with a model trained on every sample.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{fit_classifier, ingest, load_sample_image, oversample, reduce_train, FeatureSource, PipelineConfig, PipelineError, Pooled};
use crate::classify::SvmModel;
use crate::dataset::{ProvenanceKind, SampleLabel};
use crate::explain::{channel_weights, compute_cam, normalize, render_overlay, upscale_bilinear, ScalarMap};
use crate::features::{global_average_pool, mock_extract, StatSet};
use crate::oversample::SmoteConfig;
use crate::reduce::{components_for_ctv, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMode {
    /// one map per original, for its predicted species
    PerSample,
    /// one map per species: mean raw CAM over its originals
    PerClass,
}

/// PCA, CTV truncation and SVM fitted on all rows of a pooled dataset.
#[derive(Debug, Clone)]
pub struct FullModel {
    pca: PcaModel,
    n_components: usize,
    svm: SvmModel,
}

impl FullModel {
    pub fn fit(pooled: &Pooled, cfg: &PipelineConfig, ctv_percent: u32) -> Result<Self, PipelineError> {
        let table = pooled.table();
        let pca = PcaModel::fit(&table.matrix()).map_err(|e| PipelineError::stage("pca", e))?;
        let n = components_for_ctv(&pca, ctv_percent as f64);
        let mut reduced = reduce_train(&pca, table, n)?;
        if cfg.flags.smote {
            let smote = SmoteConfig {
                seed: cfg.folds.seed,
                ..cfg.smote
            };
            reduced = oversample(reduced, &smote)?.0;
        }
        let m = pooled.manifest();
        let classes: Vec<SampleLabel> = (0..m.n_species()).map(|s| m.label(s)).collect();
        let svm = fit_classifier(&reduced, &classes, cfg)?;
        Ok(Self {
            pca,
            n_components: n,
            svm,
        })
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn svm(&self) -> &SvmModel {
        &self.svm
    }

    pub fn predict(&self, pooled: &[f64]) -> Result<&SampleLabel, PipelineError> {
        let z = self
            .pca
            .project(pooled, self.n_components)
            .map_err(|e| PipelineError::stage("pca", e))?;
        self.svm.predict(&z).map_err(|e| PipelineError::stage("svm", e))
    }

    /// Per-channel CAM weights for species `species_id`.
    pub fn channel_weights(&self, species_id: usize) -> Result<Vec<f64>, PipelineError> {
        let k = self
            .svm
            .classes()
            .iter()
            .position(|c| c.species_id == species_id)
            .ok_or_else(|| PipelineError::stage("explain", format!("species {species_id} not in model")))?;
        channel_weights(&self.pca, &self.svm, k).map_err(|e| PipelineError::stage("explain", e))
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.@+".contains(c) { c } else { '_' })
        .collect()
}

/// Trains on every sample, then writes overlays to `out_dir`
/// (`<sample_id>.png` or `class_<species>.png`, plus `.csv` raw maps when
/// `raw_csv`). Needs the mock feature source.
pub fn render_heatmaps(
    cfg: &PipelineConfig,
    ctv_percent: u32,
    mode: HeatmapMode,
    alpha: f64,
    raw_csv: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let FeatureSource::Mock { grid } = cfg.features else {
        return Err(PipelineError::Config("heatmaps need features = \"mock\"".into()));
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PipelineError::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let pooled = ingest(cfg)?.augment(cfg)?.extract(&cfg.features)?;
    let model = FullModel::fit(&pooled, cfg, ctv_percent)?;
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Output {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let m = pooled.manifest();
    let mut cache = HashMap::new();
    let mut written = Vec::new();
    let mut save = |name: String, img: &crate::raster::RasterImage, raw: &ScalarMap| -> Result<(), PipelineError> {
        let png = out_dir.join(format!("{name}.png"));
        let overlay = render_overlay(img, &normalize(&upscale_bilinear(raw, img.width(), img.height()).map_err(|e| PipelineError::stage("explain", e))?), alpha)
            .map_err(|e| PipelineError::stage("explain", e))?;
        overlay.save_png(&png).map_err(|e| PipelineError::stage("explain", e))?;
        written.push(png);
        if raw_csv {
            let csv = out_dir.join(format!("{name}.csv"));
            std::fs::write(&csv, raw.to_csv()).map_err(|source| PipelineError::Output { path: csv.clone(), source })?;
            written.push(csv);
        }
        Ok(())
    };

    let originals: Vec<_> = m
        .records()
        .iter()
        .filter(|r| r.provenance.kind() == ProvenanceKind::Original)
        .collect();
    match mode {
        HeatmapMode::PerSample => {
            for rec in originals {
                let img = load_sample_image(m, &mut cache, &rec.sample_id)?;
                let maps = mock_extract(&img, grid, StatSet::default()).map_err(|e| PipelineError::stage("extract", e))?;
                let species = model.predict(&global_average_pool(&maps))?.species_id;
                let raw = compute_cam(&maps, &model.channel_weights(species)?).map_err(|e| PipelineError::stage("explain", e))?;
                save(sanitize(&rec.sample_id), &img, &raw)?;
            }
        }
        HeatmapMode::PerClass => {
            for s in 0..m.n_species() {
                let weights = model.channel_weights(s)?;
                let mut sum: Option<(Vec<f64>, usize, usize)> = None;
                let mut first_img = None;
                let members: Vec<_> = originals.iter().filter(|r| r.label.species_id == s).collect();
                for rec in &members {
                    let img = load_sample_image(m, &mut cache, &rec.sample_id)?;
                    let maps = mock_extract(&img, grid, StatSet::default()).map_err(|e| PipelineError::stage("extract", e))?;
                    let raw = compute_cam(&maps, &weights).map_err(|e| PipelineError::stage("explain", e))?;
                    let acc = sum.get_or_insert_with(|| (vec![0.0; raw.values().len()], raw.width(), raw.height()));
                    crate::linalg::axpy(1.0 / members.len() as f64, raw.values(), &mut acc.0);
                    first_img.get_or_insert(img);
                }
                if let (Some((values, w, h)), Some(img)) = (sum, first_img) {
                    let raw = ScalarMap::new(w, h, values).map_err(|e| PipelineError::stage("explain", e))?;
                    save(format!("class_{}", sanitize(&m.species()[s])), &img, &raw)?;
                }
            }
        }
    }
    Ok(written)
}
