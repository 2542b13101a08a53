//! Experiment orchestration.
//!
//! Stages run in a fixed order and each consumes the previous stage's type:
//!
//! ```text
//! Ingested -> Augmented -> Pooled -> (per split) ReducedTrain -> SvmModel
//! ```
//!
//! [`ReducedTrain`] can only be produced by the PCA stage from training
//! rows, and SMOTE accepts nothing else, so oversampling raw features or test
//! rows cannot be expressed.

mod config;
pub mod fixture;
mod heatmap;
mod output;

pub use config::{AugmentFlags, ConfigFile, FeatureSource, PcaScope, PipelineConfig};
pub use heatmap::{render_heatmaps, FullModel, HeatmapMode};
pub use output::{ablation_table, ctv_curve_csv, write_ablation, write_experiment};

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::augment::{augment_dataset, rotate_image, rotation_set, Fill};
use crate::classify::{train_multiclass_for, SvmModel};
use crate::dataset::{filter_min_count, load_manifest, plan_folds, DatasetManifest, Payload, Provenance, ProvenanceKind, SampleLabel, Split};
use crate::evaluate::{cross_validate, BoxError, CtvOutcome, CvRun, EvalReport, HarnessOptions, Learner, SplitOutcome, SplitTrace, Stage};
use crate::features::{global_average_pool, mock_extract, read_feature_csv, read_feature_table, FeatureTable, FeatureVector, StatSet};
use crate::oversample::{rebalance_traced, SmoteConfig};
use crate::raster::RasterImage;
use crate::reduce::{components_for_ctv, PcaModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 for configuration errors, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Manifest loaded and filtered to species with enough originals.
#[derive(Debug, Clone)]
pub struct Ingested {
    manifest: DatasetManifest,
}

/// Manifest holding exactly the samples the configured augmentations use.
#[derive(Debug, Clone)]
pub struct Augmented {
    manifest: DatasetManifest,
}

/// One pooled feature vector per manifest record, in manifest order.
#[derive(Debug, Clone)]
pub struct Pooled {
    manifest: DatasetManifest,
    table: FeatureTable,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested, PipelineError> {
    let m = load_manifest(&cfg.manifest).map_err(|e| PipelineError::stage("ingest", e))?;
    Ingested::new(m, cfg.min_per_class)
}

impl Ingested {
    pub fn new(m: DatasetManifest, min_per_class: usize) -> Result<Self, PipelineError> {
        let manifest = filter_min_count(&m, min_per_class).map_err(|e| PipelineError::stage("ingest", e))?;
        Ok(Self { manifest })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn has_rotations(&self) -> bool {
        self.manifest.count_kind(ProvenanceKind::Rotated) > 0
    }

    pub fn has_gan(&self) -> bool {
        self.manifest.count_kind(ProvenanceKind::Gan) > 0
    }

    /// Keeps rotated and GAN rows only when their flag is set. With
    /// rotation on and no rotated rows listed, derived rotations are added.
    pub fn augment(self, cfg: &PipelineConfig) -> Result<Augmented, PipelineError> {
        let flags = cfg.flags;
        let listed_rotations = self.has_rotations();
        let kept = self
            .manifest
            .retain(|r| match r.provenance.kind() {
                ProvenanceKind::Rotated => flags.rotation,
                ProvenanceKind::Gan => flags.gan_ingest,
                _ => true,
            })
            .map_err(|e| PipelineError::stage("augment", e))?;
        let manifest = if flags.rotation && !listed_rotations {
            let angles = rotation_set(cfg.rotation_max_deg, cfg.rotation_step_deg).map_err(|e| PipelineError::stage("augment", e))?;
            augment_dataset(&kept, &angles).map_err(|e| PipelineError::stage("augment", e))?
        } else {
            kept
        };
        Ok(Augmented { manifest })
    }
}

fn load_table(path: &std::path::Path) -> Result<FeatureTable, PipelineError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let t = if is_csv {
        read_feature_csv(path)
    } else {
        read_feature_table(path)
    };
    t.map_err(|e| PipelineError::stage("extract", e))
}

impl Augmented {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn extract(self, source: &FeatureSource) -> Result<Pooled, PipelineError> {
        match source {
            FeatureSource::External { table } => {
                let t = load_table(table)?;
                self.with_table(&t)
            }
            FeatureSource::Mock { grid } => self.mock(*grid),
        }
    }

    /// Takes each sample's vector from `t` by sample id.
    pub fn with_table(self, t: &FeatureTable) -> Result<Pooled, PipelineError> {
        let index: HashMap<&str, &FeatureVector> = t.rows().iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let mut rows = Vec::with_capacity(self.manifest.len());
        for rec in self.manifest.records() {
            let v = index
                .get(rec.sample_id.as_str())
                .ok_or_else(|| PipelineError::stage("extract", format!("no features for sample {:?}", rec.sample_id)))?;
            rows.push(FeatureVector {
                sample_id: rec.sample_id.clone(),
                label: rec.label.clone(),
                provenance: rec.provenance.clone(),
                values: v.values.clone(),
            });
        }
        let table = FeatureTable::new(t.dims(), rows).map_err(|e| PipelineError::stage("extract", e))?;
        Ok(Pooled {
            manifest: self.manifest,
            table,
        })
    }

    fn mock(self, grid: usize) -> Result<Pooled, PipelineError> {
        let mut images: HashMap<&str, RasterImage> = HashMap::new();
        let mut rows = Vec::with_capacity(self.manifest.len());
        for rec in self.manifest.records() {
            let img = load_sample_image(&self.manifest, &mut images, &rec.sample_id)?;
            let maps = mock_extract(&img, grid, StatSet::default()).map_err(|e| PipelineError::stage("extract", e))?;
            rows.push(FeatureVector {
                sample_id: rec.sample_id.clone(),
                label: rec.label.clone(),
                provenance: rec.provenance.clone(),
                values: global_average_pool(&maps),
            });
        }
        let table = FeatureTable::from_rows(rows).map_err(|e| PipelineError::stage("extract", e))?;
        Ok(Pooled {
            manifest: self.manifest,
            table,
        })
    }
}

/// Image of a record: its file, or its parent's image rotated.
pub(crate) fn load_sample_image<'m>(
    m: &'m DatasetManifest,
    cache: &mut HashMap<&'m str, RasterImage>,
    sample_id: &'m str,
) -> Result<RasterImage, PipelineError> {
    let rec = m
        .get(sample_id)
        .ok_or_else(|| PipelineError::stage("extract", format!("unknown sample {sample_id:?}")))?;
    match (&rec.payload, &rec.provenance) {
        (Payload::File(path), _) => {
            if let Some(img) = cache.get(sample_id) {
                return Ok(img.clone());
            }
            let img = RasterImage::load(path).map_err(|e| PipelineError::stage("extract", e))?;
            cache.insert(sample_id, img.clone());
            Ok(img)
        }
        (Payload::Derived, Provenance::Rotated { parent, angle_deg }) => {
            let parent_rec = m
                .get(parent)
                .ok_or_else(|| PipelineError::stage("extract", format!("missing parent {parent:?}")))?;
            let base = load_sample_image(m, cache, &parent_rec.sample_id)?;
            rotate_image(&base, *angle_deg, Fill::BorderMedian).map_err(|e| PipelineError::stage("augment", e))
        }
        (Payload::Derived, _) => Err(PipelineError::stage("extract", format!("sample {sample_id:?} has no image"))),
    }
}

impl Pooled {
    /// Pairs a manifest with a table already aligned to it.
    pub fn from_parts(manifest: DatasetManifest, table: FeatureTable) -> Result<Self, PipelineError> {
        if manifest.len() != table.len()
            || manifest
                .records()
                .iter()
                .zip(table.rows())
                .any(|(m, t)| m.sample_id != t.sample_id)
        {
            return Err(PipelineError::stage("extract", "feature table is not aligned with the manifest"));
        }
        Ok(Self { manifest, table })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    fn rows(&self, idx: &[usize]) -> FeatureTable {
        let rows = idx.iter().map(|&i| self.table.rows()[i].clone()).collect();
        FeatureTable::new(self.table.dims(), rows).expect("subset of a valid table")
    }

    /// Cross-validates the per-split stages.
    pub fn evaluate(&self, cfg: &PipelineConfig, keep_traces: bool) -> Result<CvRun, PipelineError> {
        let plan = plan_folds(&self.manifest, cfg.folds).map_err(|e| PipelineError::stage("evaluate", e))?;
        let global = match cfg.pca_scope {
            PcaScope::Global => Some(PcaModel::fit(&self.table.matrix()).map_err(|e| PipelineError::stage("pca", e))?),
            PcaScope::PerFold => None,
        };
        let learner = SplitPipeline {
            pooled: self,
            cfg,
            global_pca: global,
        };
        let opts = HarnessOptions {
            parallel: cfg.parallel,
            exempt_stages: match cfg.pca_scope {
                PcaScope::Global => vec![Stage::PcaFit],
                PcaScope::PerFold => Vec::new(),
            },
            keep_traces,
        };
        let mut run = cross_validate(&learner, &self.manifest, &plan, &opts).map_err(|e| PipelineError::stage("evaluate", e))?;
        run.report.config = cfg.echo();
        Ok(run)
    }
}

/// Reduced training rows; only [`reduce_train`] constructs one.
#[derive(Debug, Clone)]
pub struct ReducedTrain {
    table: FeatureTable,
}

impl ReducedTrain {
    pub fn table(&self) -> &FeatureTable {
        &self.table
    }
}

/// Projects training rows onto the leading `n` components of `pca`.
fn reduce_train(pca: &PcaModel, train: &FeatureTable, n: usize) -> Result<ReducedTrain, PipelineError> {
    let table = crate::reduce::transform(pca, train, n).map_err(|e| PipelineError::stage("pca", e))?;
    Ok(ReducedTrain { table })
}

/// SMOTE on reduced training rows; returns the rows that served as parents.
fn oversample(train: ReducedTrain, cfg: &SmoteConfig) -> Result<(ReducedTrain, Vec<String>), PipelineError> {
    let (table, synth) = rebalance_traced(&train.table, cfg).map_err(|e| PipelineError::stage("smote", e))?;
    let mut parents: Vec<String> = synth
        .iter()
        .flat_map(|s| [s.base, s.neighbor])
        .map(|i| train.table.rows()[i].sample_id.clone())
        .collect();
    parents.sort();
    parents.dedup();
    Ok((ReducedTrain { table }, parents))
}

fn fit_classifier(train: &ReducedTrain, classes: &[SampleLabel], cfg: &PipelineConfig) -> Result<SvmModel, PipelineError> {
    train_multiclass_for(&train.table, classes, &cfg.svm).map_err(|e| PipelineError::stage("svm", e))
}

struct SplitPipeline<'a> {
    pooled: &'a Pooled,
    cfg: &'a PipelineConfig,
    global_pca: Option<PcaModel>,
}

impl SplitPipeline<'_> {
    fn run(&self, split: &Split, seed: u64, trace: &mut SplitTrace) -> Result<SplitOutcome, PipelineError> {
        let m = &self.pooled.manifest;
        let id = |i: &usize| m.records()[*i].sample_id.clone();
        trace.touch(
            Stage::Augment,
            split.train.iter().filter_map(|&i| m.records()[i].parent_id().map(str::to_string)),
        );
        let train = self.pooled.rows(&split.train);
        let fitted;
        let pca = match &self.global_pca {
            Some(p) => {
                trace.touch(Stage::PcaFit, m.records().iter().map(|r| r.sample_id.clone()));
                p
            }
            None => {
                trace.touch(Stage::PcaFit, split.train.iter().map(id));
                fitted = PcaModel::fit(&train.matrix()).map_err(|e| PipelineError::stage("pca", e))?;
                &fitted
            }
        };
        let classes: Vec<SampleLabel> = (0..m.n_species()).map(|s| m.label(s)).collect();
        let test = self.pooled.rows(&split.test);
        trace.touch(Stage::Predict, split.test.iter().map(id));

        let mut per_ctv = Vec::with_capacity(self.cfg.ctv_grid.len());
        let mut warnings = 0;
        let mut cache: Option<(usize, Vec<usize>)> = None;
        for &ctv in &self.cfg.ctv_grid {
            let n = components_for_ctv(pca, ctv as f64);
            let predicted = match &cache {
                Some((cached_n, p)) if *cached_n == n => p.clone(),
                _ => {
                    let mut reduced = reduce_train(pca, &train, n)?;
                    if self.cfg.flags.smote {
                        let smote = SmoteConfig { seed, ..self.cfg.smote };
                        let (r, parents) = oversample(reduced, &smote)?;
                        trace.touch(Stage::Smote, parents);
                        reduced = r;
                    }
                    let ids: Vec<String> = reduced.table.rows().iter().map(|r| r.sample_id.clone()).collect();
                    trace.touch(Stage::Standardize, ids.iter().cloned());
                    trace.touch(Stage::SvmTrain, ids);
                    let model = fit_classifier(&reduced, &classes, self.cfg)?;
                    warnings += model.unconverged();
                    let test_scores = pca.project_matrix(&test.matrix(), n).map_err(|e| PipelineError::stage("pca", e))?;
                    let mut p = Vec::with_capacity(test.len());
                    for row in test_scores.iter_rows() {
                        p.push(model.predict(row).map_err(|e| PipelineError::stage("svm", e))?.species_id);
                    }
                    cache = Some((n, p.clone()));
                    p
                }
            };
            per_ctv.push(CtvOutcome {
                ctv_percent: ctv,
                retained_components: n,
                predicted,
            });
        }
        Ok(SplitOutcome {
            per_ctv,
            convergence_warnings: warnings,
        })
    }
}

impl Learner for SplitPipeline<'_> {
    fn run_split(&self, _m: &DatasetManifest, split: &Split, seed: u64, trace: &mut SplitTrace) -> Result<SplitOutcome, BoxError> {
        self.run(split, seed, trace).map_err(Into::into)
    }
}

/// Full run: ingest, augment, extract, cross-validate.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let pooled = ingest(cfg)?.augment(cfg)?.extract(&cfg.features)?;
    Ok(pooled.evaluate(cfg, false)?.report)
}

/// One rung of the ablation ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Rung {
    pub name: &'static str,
    pub flags: AugmentFlags,
}

pub const LADDER: [Rung; 4] = [
    Rung {
        name: "baseline (no augmentation)",
        flags: AugmentFlags {
            rotation: false,
            gan_ingest: false,
            smote: false,
        },
    },
    Rung {
        name: "+rotation",
        flags: AugmentFlags {
            rotation: true,
            gan_ingest: false,
            smote: false,
        },
    },
    Rung {
        name: "+gan",
        flags: AugmentFlags {
            rotation: false,
            gan_ingest: true,
            smote: false,
        },
    },
    Rung {
        name: "+rotation+gan+smote",
        flags: AugmentFlags {
            rotation: true,
            gan_ingest: true,
            smote: true,
        },
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    /// completed rungs in ladder order
    pub rungs: Vec<(&'static str, EvalReport)>,
    /// skipped rungs with the reason
    pub skipped: Vec<(&'static str, String)>,
}

impl Ablation {
    pub fn baseline(&self) -> Option<&EvalReport> {
        self.rungs.first().filter(|r| r.0 == LADDER[0].name).map(|r| &r.1)
    }

    pub fn get(&self, name: &str) -> Option<&EvalReport> {
        self.rungs.iter().find(|r| r.0 == name).map(|r| &r.1)
    }
}

/// Runs the ladder with identical seeds on every rung. Rungs whose data is
/// missing (no rotated rows and no images to rotate, or no GAN rows) are
/// skipped.
pub fn run_ablation(cfg: &PipelineConfig) -> Result<Ablation, PipelineError> {
    let ingested = ingest(cfg)?;
    let table = match &cfg.features {
        FeatureSource::External { table } => Some(load_table(table)?),
        FeatureSource::Mock { .. } => None,
    };
    ablate_with(ingested, cfg, |aug| match &table {
        Some(t) => aug.with_table(t),
        None => aug.extract(&cfg.features),
    })
}

/// [`run_ablation`] over an already ingested manifest and a custom
/// extraction step.
pub fn ablate_with<F>(ingested: Ingested, cfg: &PipelineConfig, mut extract: F) -> Result<Ablation, PipelineError>
where
    F: FnMut(Augmented) -> Result<Pooled, PipelineError>,
{
    let can_rotate = ingested.has_rotations() || matches!(cfg.features, FeatureSource::Mock { .. });
    let has_gan = ingested.has_gan();
    let mut rungs = Vec::new();
    let mut skipped = Vec::new();
    for rung in &LADDER {
        let missing = match (rung.flags.rotation && !can_rotate, rung.flags.gan_ingest && !has_gan) {
            (true, true) => Some("no rotated samples and no GAN samples"),
            (true, false) => Some("no rotated samples in the manifest and no images to rotate"),
            (false, true) => Some("no GAN samples in the manifest"),
            (false, false) => None,
        };
        if let Some(reason) = missing {
            skipped.push((rung.name, reason.to_string()));
            continue;
        }
        let rung_cfg = PipelineConfig {
            flags: rung.flags,
            ..cfg.clone()
        };
        let pooled = extract(ingested.clone().augment(&rung_cfg)?)?;
        rungs.push((rung.name, pooled.evaluate(&rung_cfg, false)?.report));
    }
    Ok(Ablation { rungs, skipped })
}

/// Pipeline over in-memory data: runs the augmentation filter and takes
/// features from `table` by sample id.
pub fn evaluate_in_memory(
    manifest: DatasetManifest,
    table: &FeatureTable,
    cfg: &PipelineConfig,
    keep_traces: bool,
) -> Result<CvRun, PipelineError> {
    Ingested::new(manifest, cfg.min_per_class)?
        .augment(cfg)?
        .with_table(table)?
        .evaluate(cfg, keep_traces)
}
