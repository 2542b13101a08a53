//! Experiment configuration.
//!
//! A config file is flat `key = value` TOML. Every key can be overridden
//! from the command line with `key=value`, where the value is parsed as a
//! TOML value and falls back to a bare string.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `manifest` | required | manifest CSV |
//! | `features` | `"mock"` | `"mock"` or `"external"` |
//! | `feature_table` | | `.fvec` or `.csv` table, required for `external` |
//! | `mock_grid` | 7 | mock extractor grid size |
//! | `rotation` | false | add rotated samples |
//! | `rotation_max_deg` | 20 | largest absolute angle |
//! | `rotation_step_deg` | 5 | angle step |
//! | `gan_ingest` | false | keep `gan` manifest rows |
//! | `gan_in_folds` | false | deal GAN rows into folds rather than training on all of them |
//! | `smote` | false | SMOTE-rebalance each training fold |
//! | `smote_k` | 5 | SMOTE neighbors |
//! | `smote_target` | `"match_majority"` | or `"fixed"` |
//! | `smote_per_class` | | class size for `fixed` |
//! | `smote_singletons` | `"skip"` | or `"error"` |
//! | `svm_c` | 1.0 | penalty |
//! | `svm_tol` | 1e-6 | gradient-norm stopping tolerance |
//! | `svm_max_iter` | 500 | |
//! | `svm_solver` | `"newton"` | or `"gradient_descent"` |
//! | `ctv_grid` | 10..100 | CTV levels in percent |
//! | `pca_scope` | `"per_fold"` | or `"global"` (fits on all samples, exempt from the leakage check) |
//! | `repeats` | 10 | |
//! | `k` | 2 | folds |
//! | `seed` | 0 | master seed |
//! | `min_per_class` | 2 | drop species with fewer originals |
//! | `parallel` | false | run splits on the rayon pool |
//! | `output_dir` | `"out"` | |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classify::{Solver, TrainOptions};
use crate::dataset::FoldOptions;
use crate::oversample::{SingletonPolicy, SmoteConfig, SmoteTarget};
use crate::reduce::{validate_ctv_grid, CTV_GRID};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// run the built-in extractor on the manifest's images
    Mock { grid: usize },
    /// look every sample up by id in a feature table
    External { table: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub rotation: bool,
    pub gan_ingest: bool,
    pub smote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaScope {
    #[default]
    PerFold,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub features: FeatureSource,
    pub flags: AugmentFlags,
    pub rotation_max_deg: f64,
    pub rotation_step_deg: f64,
    pub smote: SmoteConfig,
    pub svm: TrainOptions,
    pub ctv_grid: Vec<u32>,
    pub folds: FoldOptions,
    pub pca_scope: PcaScope,
    pub min_per_class: usize,
    pub parallel: bool,
    pub output_dir: PathBuf,
}

/// On-disk form; every key optional except `manifest`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub features: Option<String>,
    pub feature_table: Option<PathBuf>,
    pub mock_grid: Option<usize>,
    pub rotation: Option<bool>,
    pub rotation_max_deg: Option<f64>,
    pub rotation_step_deg: Option<f64>,
    pub gan_ingest: Option<bool>,
    pub gan_in_folds: Option<bool>,
    pub smote: Option<bool>,
    pub smote_k: Option<usize>,
    pub smote_target: Option<String>,
    pub smote_per_class: Option<usize>,
    pub smote_singletons: Option<String>,
    pub svm_c: Option<f64>,
    pub svm_tol: Option<f64>,
    pub svm_max_iter: Option<usize>,
    pub svm_solver: Option<String>,
    pub ctv_grid: Option<Vec<u32>>,
    pub pca_scope: Option<String>,
    pub repeats: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub min_per_class: Option<usize>,
    pub parallel: Option<bool>,
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Parses `key=value`; the value is read as TOML, else as a plain string.
fn parse_override(s: &str) -> Result<(String, toml::Value), PipelineError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {s:?} is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl ConfigFile {
    /// Reads `path` (if any) and applies `overrides` on top. Relative paths
    /// in a file are resolved against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table = toml::Table::new();
        let mut base = PathBuf::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            table = text
                .parse::<toml::Table>()
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            base = p.parent().map(Path::to_path_buf).unwrap_or_default();
        }
        let mut file: ConfigFile = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        file.rebase(&base);
        if !overrides.is_empty() {
            let mut over = toml::Table::new();
            for o in overrides {
                let (k, v) = parse_override(o)?;
                over.insert(k, v);
            }
            let patch: ConfigFile = toml::Value::Table(over)
                .try_into()
                .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
            file.merge(patch);
        }
        Ok(file)
    }

    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.manifest, &mut self.feature_table, &mut self.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn merge(&mut self, o: ConfigFile) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f; } )* };
        }
        take!(
            manifest, features, feature_table, mock_grid, rotation, rotation_max_deg, rotation_step_deg, gan_ingest,
            gan_in_folds, smote, smote_k, smote_target, smote_per_class, smote_singletons, svm_c, svm_tol, svm_max_iter,
            svm_solver, ctv_grid, pca_scope, repeats, k, seed, min_per_class, parallel, output_dir
        );
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates and fills in defaults.
    pub fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let manifest = self.manifest.clone().ok_or_else(|| config_err("`manifest` is required"))?;
        let features = match self.features.as_deref().unwrap_or("mock") {
            "mock" => {
                let grid = self.mock_grid.unwrap_or(7);
                if grid == 0 {
                    return Err(config_err("mock_grid must be at least 1"));
                }
                FeatureSource::Mock { grid }
            }
            "external" => FeatureSource::External {
                table: self
                    .feature_table
                    .clone()
                    .ok_or_else(|| config_err("features = \"external\" needs feature_table"))?,
            },
            other => return Err(config_err(format!("unknown feature source {other:?}"))),
        };
        let target = match self.smote_target.as_deref().unwrap_or("match_majority") {
            "match_majority" => SmoteTarget::MatchMajority,
            "fixed" => SmoteTarget::FixedPerClass(
                self.smote_per_class
                    .ok_or_else(|| config_err("smote_target = \"fixed\" needs smote_per_class"))?,
            ),
            other => return Err(config_err(format!("unknown smote_target {other:?}"))),
        };
        let singleton = match self.smote_singletons.as_deref().unwrap_or("skip") {
            "skip" => SingletonPolicy::Skip,
            "error" => SingletonPolicy::Error,
            other => return Err(config_err(format!("unknown smote_singletons {other:?}"))),
        };
        let k_neighbors = self.smote_k.unwrap_or(5);
        if k_neighbors == 0 {
            return Err(config_err("smote_k must be at least 1"));
        }
        let solver = match self.svm_solver.as_deref().unwrap_or("newton") {
            "newton" => Solver::Newton,
            "gradient_descent" => Solver::GradientDescent,
            other => return Err(config_err(format!("unknown svm_solver {other:?}"))),
        };
        let defaults = TrainOptions::default();
        let svm = TrainOptions {
            c: self.svm_c.unwrap_or(defaults.c),
            tol: self.svm_tol.unwrap_or(defaults.tol),
            max_iter: self.svm_max_iter.unwrap_or(defaults.max_iter),
            solver,
        };
        if !(svm.c.is_finite() && svm.c > 0.0) {
            return Err(config_err(format!("svm_c must be positive, got {}", svm.c)));
        }
        if !(svm.tol.is_finite() && svm.tol > 0.0) {
            return Err(config_err(format!("svm_tol must be positive, got {}", svm.tol)));
        }
        let ctv_grid = self.ctv_grid.clone().unwrap_or_else(|| CTV_GRID.to_vec());
        validate_ctv_grid(&ctv_grid).map_err(|e| config_err(e.to_string()))?;
        let pca_scope = match self.pca_scope.as_deref().unwrap_or("per_fold") {
            "per_fold" => PcaScope::PerFold,
            "global" => PcaScope::Global,
            other => return Err(config_err(format!("unknown pca_scope {other:?}"))),
        };
        let fold_defaults = FoldOptions::default();
        let folds = FoldOptions {
            repeats: self.repeats.unwrap_or(fold_defaults.repeats),
            k: self.k.unwrap_or(fold_defaults.k),
            seed: self.seed.unwrap_or(fold_defaults.seed),
            gan_in_folds: self.gan_in_folds.unwrap_or(false),
        };
        if folds.k < 2 || folds.repeats == 0 {
            return Err(config_err("need k >= 2 and repeats >= 1"));
        }
        let min_per_class = self.min_per_class.unwrap_or(2);
        if min_per_class < folds.k {
            return Err(config_err(format!(
                "min_per_class ({min_per_class}) must be at least k ({})",
                folds.k
            )));
        }
        let rotation_max_deg = self.rotation_max_deg.unwrap_or(20.0);
        let rotation_step_deg = self.rotation_step_deg.unwrap_or(5.0);
        let flags = AugmentFlags {
            rotation: self.rotation.unwrap_or(false),
            gan_ingest: self.gan_ingest.unwrap_or(false),
            smote: self.smote.unwrap_or(false),
        };
        if flags.rotation {
            crate::augment::rotation_set(rotation_max_deg, rotation_step_deg).map_err(|e| config_err(e.to_string()))?;
        }
        Ok(PipelineConfig {
            manifest,
            features,
            flags,
            rotation_max_deg,
            rotation_step_deg,
            smote: SmoteConfig {
                k_neighbors,
                target,
                singleton,
                seed: 0,
            },
            svm,
            ctv_grid,
            folds,
            pca_scope,
            min_per_class,
            parallel: self.parallel.unwrap_or(false),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

impl PipelineConfig {
    /// Defaults for a manifest and feature source.
    pub fn new(manifest: impl Into<PathBuf>, features: FeatureSource) -> Self {
        let mut cfg = ConfigFile {
            manifest: Some(manifest.into()),
            ..ConfigFile::default()
        }
        .resolve()
        .expect("defaults are valid");
        cfg.features = features;
        cfg
    }

    /// JSON echo for reports.
    pub fn echo(&self) -> serde_json::Value {
        let (features, table, grid) = match &self.features {
            FeatureSource::Mock { grid } => ("mock", None, Some(*grid)),
            FeatureSource::External { table } => ("external", Some(table.display().to_string()), None),
        };
        let target = match self.smote.target {
            SmoteTarget::MatchMajority => serde_json::json!("match_majority"),
            SmoteTarget::FixedPerClass(n) => serde_json::json!({ "fixed": n }),
        };
        serde_json::json!({
            "features": features,
            "feature_table": table,
            "mock_grid": grid,
            "flags": self.flags,
            "rotation_max_deg": self.rotation_max_deg,
            "rotation_step_deg": self.rotation_step_deg,
            "smote_k": self.smote.k_neighbors,
            "smote_target": target,
            "smote_singletons": format!("{:?}", self.smote.singleton).to_lowercase(),
            "svm_c": self.svm.c,
            "svm_tol": self.svm.tol,
            "svm_max_iter": self.svm.max_iter,
            "svm_solver": format!("{:?}", self.svm.solver),
            "ctv_grid": self.ctv_grid,
            "pca_scope": self.pca_scope,
            "repeats": self.folds.repeats,
            "k": self.folds.k,
            "seed": self.folds.seed,
            "gan_in_folds": self.folds.gan_in_folds,
            "min_per_class": self.min_per_class,
        })
    }
}
