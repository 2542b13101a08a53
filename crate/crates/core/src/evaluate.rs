//! Accuracy, confusion counts and the repeated stratified cross-validation
//! harness.
//!
//! The harness hands every split to a [`Learner`] together with a seed
//! derived from `(master seed, repeat, fold)` and a [`SplitTrace`] in which
//! the learner tags each sample it touches per stage. After the split the
//! harness asserts that no test sample was touched by a fitting stage and that
//! every prediction is for an original test sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, FoldPlan, ProvenanceKind, Split};
use crate::rng::derive_seed;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("leakage in split (repeat {repeat}, fold {fold}): {message}")]
    Leakage { repeat: usize, fold: usize, message: String },
    #[error("no split succeeded; first failure: {first}")]
    NoSuccessfulSplits { first: String },
    #[error("split outcomes disagree: {0}")]
    Inconsistent(String),
}

/// Fraction of positions where `truth` and `predicted` agree.
pub fn accuracy<T: PartialEq>(truth: &[T], predicted: &[T]) -> Result<f64, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::Shape(format!("{} truths, {} predictions", truth.len(), predicted.len())));
    }
    if truth.is_empty() {
        return Err(EvalError::Shape("no samples".into()));
    }
    let correct = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// `counts[truth][predicted]` over species ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_labels(n_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::Shape(format!("{} truths, {} predictions", truth.len(), predicted.len())));
        }
        let mut m = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), EvalError> {
        if truth >= self.n_classes || predicted >= self.n_classes {
            return Err(EvalError::Shape(format!(
                "label pair ({truth}, {predicted}) outside {} classes",
                self.n_classes
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|t| self.counts[t][c]).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() - self.tp(c)
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    /// Correct over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.n_classes).map(|c| self.tp(c)).sum::<u64>() as f64 / total as f64
    }
}

/// Pipeline stages a sample can be touched by within one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// original whose derived samples enter training
    Augment,
    PcaFit,
    Smote,
    Standardize,
    SvmTrain,
    Predict,
}

impl Stage {
    pub const FITTING: [Stage; 5] = [Stage::Augment, Stage::PcaFit, Stage::Smote, Stage::Standardize, Stage::SvmTrain];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Augment => "augment",
            Stage::PcaFit => "pca_fit",
            Stage::Smote => "smote",
            Stage::Standardize => "standardize",
            Stage::SvmTrain => "svm_train",
            Stage::Predict => "predict",
        };
        f.write_str(s)
    }
}

/// Sample ids touched per stage during one split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitTrace {
    touched: BTreeMap<Stage, BTreeSet<String>>,
}

impl SplitTrace {
    pub fn touch<I, S>(&mut self, stage: Stage, ids: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.touched.entry(stage).or_default().extend(ids.into_iter().map(Into::into));
    }

    pub fn touched(&self, stage: Stage) -> impl Iterator<Item = &str> {
        self.touched.get(&stage).into_iter().flatten().map(String::as_str)
    }

    pub fn contains(&self, stage: Stage, id: &str) -> bool {
        self.touched.get(&stage).is_some_and(|s| s.contains(id))
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        self.touched.keys().copied()
    }
}

/// Predictions for the test originals at one CTV level, in `Split::test`
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct CtvOutcome {
    pub ctv_percent: u32,
    pub retained_components: usize,
    pub predicted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitOutcome {
    pub per_ctv: Vec<CtvOutcome>,
    pub convergence_warnings: usize,
}

/// One train/evaluate cycle of a pipeline.
pub trait Learner: Sync {
    fn run_split(
        &self,
        m: &DatasetManifest,
        split: &Split,
        seed: u64,
        trace: &mut SplitTrace,
    ) -> Result<SplitOutcome, BoxError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HarnessOptions {
    pub parallel: bool,
    /// fitting stages allowed to see test samples (e.g. a PCA fitted on the
    /// whole dataset); listed in the report
    pub exempt_stages: Vec<Stage>,
    pub keep_traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub ctv_percent: u32,
    pub retained_components: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub per_ctv: Vec<SplitAccuracy>,
    pub convergence_warnings: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtvPoint {
    pub ctv_percent: u32,
    pub mean_retained_components: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub species: usize,
    pub originals: usize,
    pub rotated: usize,
    pub gan: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// echo of the run configuration, filled in by the caller
    pub config: serde_json::Value,
    pub dataset: DatasetCounts,
    pub species: Vec<String>,
    pub repeats: usize,
    pub k: usize,
    pub master_seed: u64,
    pub leakage_exemptions: Vec<Stage>,
    pub splits: Vec<SplitRecord>,
    pub ctv_curve: Vec<CtvPoint>,
    /// CTV level with the highest mean accuracy, ties to the smaller level
    pub best_ctv: u32,
    /// per-split accuracies at `best_ctv`, successful splits in order
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// sample standard deviation (n - 1); 0 for a single split
    pub std_accuracy: f64,
    /// summed over successful splits at `best_ctv`
    pub confusion: ConfusionMatrix,
    pub convergence_warnings: usize,
    pub failed_splits: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct CvRun {
    pub report: EvalReport,
    /// per split, repeat-major; empty unless `keep_traces`
    pub traces: Vec<SplitTrace>,
}

struct SplitResult {
    split: Split,
    seed: u64,
    outcome: Result<SplitOutcome, String>,
    trace: SplitTrace,
}

fn check_purity(m: &DatasetManifest, r: &SplitResult, exempt: &[Stage]) -> Result<(), EvalError> {
    let leak = |message: String| EvalError::Leakage {
        repeat: r.split.repeat,
        fold: r.split.fold,
        message,
    };
    let test_ids: BTreeSet<&str> = r.split.test.iter().map(|&i| m.records()[i].sample_id.as_str()).collect();
    for &i in &r.split.test {
        let rec = &m.records()[i];
        if rec.provenance.kind() != ProvenanceKind::Original {
            return Err(leak(format!("{} sample {:?} in the test set", rec.provenance.kind(), rec.sample_id)));
        }
    }
    for stage in Stage::FITTING {
        if exempt.contains(&stage) {
            continue;
        }
        if let Some(id) = r.trace.touched(stage).find(|id| test_ids.contains(id)) {
            return Err(leak(format!("test sample {id:?} touched by {stage}")));
        }
    }
    if let Some(id) = r.trace.touched(Stage::Predict).find(|id| !test_ids.contains(id)) {
        return Err(leak(format!("prediction for non-test sample {id:?}")));
    }
    Ok(())
}

/// Runs `learner` on every split of `plan` and aggregates the results.
/// Serial and parallel execution give identical reports.
pub fn cross_validate<L: Learner>(
    learner: &L,
    m: &DatasetManifest,
    plan: &FoldPlan,
    opts: &HarnessOptions,
) -> Result<CvRun, EvalError> {
    let splits = plan.splits(m);
    let run = |split: Split| {
        let seed = derive_seed(plan.seed, &[split.repeat as u64, split.fold as u64]);
        let mut trace = SplitTrace::default();
        let outcome = learner.run_split(m, &split, seed, &mut trace).map_err(|e| e.to_string());
        SplitResult {
            split,
            seed,
            outcome,
            trace,
        }
    };
    let results: Vec<SplitResult> = if opts.parallel {
        splits.into_par_iter().map(run).collect()
    } else {
        splits.into_iter().map(run).collect()
    };
    for r in &results {
        if r.outcome.is_ok() {
            check_purity(m, r, &opts.exempt_stages)?;
        }
    }
    aggregate(m, plan, opts, results)
}

fn aggregate(m: &DatasetManifest, plan: &FoldPlan, opts: &HarnessOptions, results: Vec<SplitResult>) -> Result<CvRun, EvalError> {
    let n_species = m.n_species();
    let mut records = Vec::with_capacity(results.len());
    let mut grid: Option<Vec<u32>> = None;
    // per CTV level: per-split accuracy, retained count and confusion
    let mut per_level: Vec<Vec<(f64, usize, ConfusionMatrix)>> = Vec::new();
    let mut first_error = None;
    let mut warnings = 0;
    let mut failed = 0;
    let mut traces = Vec::new();
    for r in results {
        let truth: Vec<usize> = r.split.test.iter().map(|&i| m.records()[i].label.species_id).collect();
        let mut rec = SplitRecord {
            repeat: r.split.repeat,
            fold: r.split.fold,
            seed: r.seed,
            n_train: r.split.train.len(),
            n_test: r.split.test.len(),
            per_ctv: Vec::new(),
            convergence_warnings: 0,
            error: None,
        };
        match r.outcome {
            Ok(outcome) => {
                let levels: Vec<u32> = outcome.per_ctv.iter().map(|o| o.ctv_percent).collect();
                if levels.is_empty() {
                    return Err(EvalError::Inconsistent("split produced no predictions".into()));
                }
                match &grid {
                    None => {
                        per_level = vec![Vec::new(); levels.len()];
                        grid = Some(levels);
                    }
                    Some(g) if *g != levels => {
                        return Err(EvalError::Inconsistent(format!("CTV levels {levels:?} vs {g:?}")));
                    }
                    Some(_) => {}
                }
                for (slot, o) in per_level.iter_mut().zip(&outcome.per_ctv) {
                    let cm = ConfusionMatrix::from_labels(n_species, &truth, &o.predicted)?;
                    let acc = accuracy(&truth, &o.predicted)?;
                    rec.per_ctv.push(SplitAccuracy {
                        ctv_percent: o.ctv_percent,
                        retained_components: o.retained_components,
                        accuracy: acc,
                    });
                    slot.push((acc, o.retained_components, cm));
                }
                rec.convergence_warnings = outcome.convergence_warnings;
                warnings += outcome.convergence_warnings;
            }
            Err(e) => {
                failed += 1;
                first_error.get_or_insert_with(|| e.clone());
                rec.error = Some(e);
            }
        }
        if opts.keep_traces {
            traces.push(r.trace);
        }
        records.push(rec);
    }
    let Some(grid) = grid else {
        return Err(EvalError::NoSuccessfulSplits {
            first: first_error.unwrap_or_else(|| "no splits".into()),
        });
    };

    let mut curve = Vec::with_capacity(grid.len());
    for (&ctv, rows) in grid.iter().zip(&per_level) {
        let accs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let (mean, std) = mean_std(&accs);
        let retained = rows.iter().map(|r| r.1 as f64).sum::<f64>() / rows.len() as f64;
        curve.push(CtvPoint {
            ctv_percent: ctv,
            mean_retained_components: retained,
            mean_accuracy: mean,
            std_accuracy: std,
        });
    }
    let mut best = 0;
    for (i, p) in curve.iter().enumerate().skip(1) {
        if p.mean_accuracy > curve[best].mean_accuracy {
            best = i;
        }
    }
    let accuracies: Vec<f64> = per_level[best].iter().map(|r| r.0).collect();
    let mut confusion = ConfusionMatrix::new(n_species);
    for r in &per_level[best] {
        confusion.merge(&r.2);
    }
    let report = EvalReport {
        config: serde_json::Value::Null,
        dataset: DatasetCounts {
            species: n_species,
            originals: m.count_kind(ProvenanceKind::Original),
            rotated: m.count_kind(ProvenanceKind::Rotated),
            gan: m.count_kind(ProvenanceKind::Gan),
        },
        species: m.species().to_vec(),
        repeats: plan.repeats,
        k: plan.k,
        master_seed: plan.seed,
        leakage_exemptions: opts.exempt_stages.clone(),
        splits: records,
        best_ctv: curve[best].ctv_percent,
        mean_accuracy: curve[best].mean_accuracy,
        std_accuracy: curve[best].std_accuracy,
        ctv_curve: curve,
        accuracies,
        confusion,
        convergence_warnings: warnings,
        failed_splits: failed,
    };
    Ok(CvRun { report, traces })
}
