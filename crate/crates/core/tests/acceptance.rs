//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints
//! one `PASS`/`FAIL` line per criterion; exits nonzero if any fails.
//!
//! Every numeric threshold lives in the `tol` module below.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use taxaug::augment::{augment_dataset, rotation_set};
use taxaug::classify::{gradient, objective, train_binary, TrainOptions};
use taxaug::dataset::{plan_folds, FoldOptions, Payload, Split};
use taxaug::evaluate::{cross_validate, BoxError, CtvOutcome, EvalError, HarnessOptions, Learner, SplitOutcome, SplitTrace, Stage};
use taxaug::explain::{compute_cam, upscale_bilinear, ScalarMap};
use taxaug::oversample::{rebalance_traced, SmoteConfig};
use taxaug::pipeline::fixture::{build_fixture, FixtureSpec};
use taxaug::pipeline::{ablate_with, AugmentFlags, FeatureSource, Ingested, PipelineConfig, LADDER};
use taxaug::reduce::{components_for_ctv, ctv_sweep_with, validate_ctv_grid};
use taxaug::rng::Rng;
use taxaug::{DatasetManifest, FeatureMaps, FeatureTable, FeatureVector, Matrix, PcaModel, Provenance, SampleLabel, SampleRecord, CTV_GRID};

mod tol {
    use std::time::Duration;

    pub const PCA_EIGEN: f64 = 1e-8;
    pub const PCA_RECONSTRUCT: f64 = 1e-6;
    pub const PCA_BUDGET: Duration = Duration::from_secs(5);

    pub const SVM_GRID_GAP: f64 = 1e-3;
    pub const SVM_FD_RELATIVE: f64 = 1e-4;
    pub const SVM_BUDGET: Duration = Duration::from_secs(30);

    pub const SMOTE_BETWEEN: f64 = 1e-9;
    pub const SMOTE_BUDGET: Duration = Duration::from_secs(5);

    /// Minimum gain of the full ladder over the baseline, in accuracy points.
    pub const LADDER_MIN_POINTS: f64 = 5.0;
    /// Gain measured on the standard fixture when the suite was frozen
    /// (baseline 21.33 %, full ladder 46.04 %).
    pub const LADDER_FROZEN_POINTS: f64 = 24.71;
    /// Allowed shortfall against the frozen gain before it counts as a
    /// regression.
    pub const LADDER_FROZEN_SLACK: f64 = 0.5;
    pub const LADDER_BUDGET: Duration = Duration::from_secs(60);

    pub const CAM_LINEAR: f64 = 1e-12;
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(name: &str, elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || format!("{name} took {elapsed:.2?}, budget {budget:?}"))
}

// ---------------------------------------------------------------------------
// PCA

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    cov
}

fn pca_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from(0x9ca);
    let (mut worst_eig, mut worst_ratio, mut worst_rec) = (0.0f64, 0.0f64, 0.0f64);
    for table in 0..200 {
        let n = 2 + rng.index(7);
        let d = 1 + rng.index(6);
        let scale = 10f64.powf(2.0 * rng.uniform() - 1.0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| scale * rng.normal()).collect()).collect();
        let model = PcaModel::fit(&Matrix::from_rows(&rows)).map_err(|e| format!("table {table}: {e}"))?;

        let oracle = jacobi_eigenvalues(sample_covariance(&rows));
        let total: f64 = oracle.iter().map(|v| v.max(0.0)).sum();
        let got = model.eigenvalues();
        ensure(got.len() == d, || format!("table {table}: {} eigenvalues for {d} dims", got.len()))?;
        for k in 0..d {
            let e = (got[k] - oracle[k].max(0.0)).abs() / total.max(1.0);
            worst_eig = worst_eig.max(e);
            let r = (model.explained_ratio()[k] - oracle[k].max(0.0) / total).abs();
            worst_ratio = worst_ratio.max(r);
        }

        for row in &rows {
            let z = model.project(row, d).map_err(|e| e.to_string())?;
            let back = model.reconstruct(&z).map_err(|e| e.to_string())?;
            for (a, b) in row.iter().zip(&back) {
                worst_rec = worst_rec.max((a - b).abs());
            }
        }
    }
    ensure(worst_eig <= tol::PCA_EIGEN, || format!("eigenvalue error {worst_eig:e}"))?;
    ensure(worst_ratio <= tol::PCA_EIGEN, || format!("explained ratio error {worst_ratio:e}"))?;
    ensure(worst_rec < tol::PCA_RECONSTRUCT, || format!("reconstruction error {worst_rec:e}"))?;
    within_budget("PCA oracle", start.elapsed(), tol::PCA_BUDGET)?;
    Ok(format!(
        "200 tables; eigen {worst_eig:.1e}, ratio {worst_ratio:.1e}, reconstruct {worst_rec:.1e}, {:.2?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------------------
// SVM

const GRID_STEPS: usize = 601;

fn grid_value(i: usize) -> f64 {
    -3.0 + 0.01 * i as f64
}

/// `1/2 |w|^2 + C sum max(0, 1 - y (w.x + b))^2`, written out independently.
fn squared_hinge(w: [f64; 2], b: f64, x: &[[f64; 2]], y: &[f64], c: f64) -> f64 {
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi * (w[0] * xi[0] + w[1] * xi[1] + b)).max(0.0).powi(2))
        .sum();
    0.5 * (w[0] * w[0] + w[1] * w[1]) + c * loss
}

/// Exhaustive minimum over the 0.01 lattice on `[-3, 3]^3`. For fixed
/// `(w1, w2)` the objective is convex in `b`, so its lattice samples form a
/// convex sequence and the first non-negative forward difference marks the
/// minimum.
fn grid_minimum(x: &[[f64; 2]], y: &[f64], c: f64) -> (f64, [f64; 3]) {
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..GRID_STEPS {
        for j in 0..GRID_STEPS {
            let w = [grid_value(i), grid_value(j)];
            let f = |k: usize| squared_hinge(w, grid_value(k), x, y, c);
            let (mut lo, mut hi) = (0, GRID_STEPS - 1);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if f(mid + 1) >= f(mid) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let v = f(lo);
            if v < best.0 {
                best = (v, [w[0], w[1], grid_value(lo)]);
            }
        }
    }
    best
}

fn svm_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from(0x5f3);
    let c = 1.0;
    let opts = TrainOptions {
        c,
        tol: 1e-9,
        ..TrainOptions::default()
    };
    let (mut instances, mut rejected) = (0, 0);
    let (mut worst_gap, mut worst_fd) = (0.0f64, 0.0f64);
    while instances < 50 {
        let n = 2 + rng.index(5);
        let x: Vec<[f64; 2]> = (0..n).map(|_| [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0]).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if rng.uniform() < 0.5 { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let xm = Matrix::from_rows(&x);

        let fit = train_binary(&xm, &y, &opts).map_err(|e| e.to_string())?;
        ensure(fit.converged, || format!("instance {instances}: not converged"))?;
        if fit.w.iter().chain([&fit.b]).any(|v| v.abs() > 2.95) {
            rejected += 1;
            continue;
        }

        // the library objective agrees with the formula above
        let own = squared_hinge([fit.w[0], fit.w[1]], fit.b, &x, &y, c);
        let lib = objective(&fit.w, fit.b, &xm, &y, c).map_err(|e| e.to_string())?;
        ensure((own - lib).abs() <= 1e-12 * own.max(1.0), || format!("objective {lib} vs formula {own}"))?;

        let (grid, at) = grid_minimum(&x, &y, c);
        ensure(fit.objective <= grid + 1e-12, || {
            format!("instance {instances}: solver {} above grid minimum {grid} at {at:?}", fit.objective)
        })?;
        worst_gap = worst_gap.max(grid - fit.objective);

        // central differences at a random point
        let p = [rng.normal(), rng.normal(), rng.normal()];
        let (gw, gb) = gradient(&p[..2], p[2], &xm, &y, c).map_err(|e| e.to_string())?;
        let analytic = [gw[0], gw[1], gb];
        let h = 1e-6;
        for k in 0..3 {
            let (mut a, mut b) = (p, p);
            a[k] += h;
            b[k] -= h;
            let fd = (squared_hinge([a[0], a[1]], a[2], &x, &y, c) - squared_hinge([b[0], b[1]], b[2], &x, &y, c)) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / analytic[k].abs().max(1.0);
            worst_fd = worst_fd.max(rel);
        }
        instances += 1;
    }
    ensure(worst_gap <= tol::SVM_GRID_GAP, || format!("grid gap {worst_gap:e}"))?;
    ensure(worst_fd <= tol::SVM_FD_RELATIVE, || format!("finite-difference error {worst_fd:e}"))?;
    within_budget("SVM oracle", start.elapsed(), tol::SVM_BUDGET)?;
    Ok(format!(
        "50 instances ({rejected} rejected near the grid edge); grid gap {worst_gap:.1e}, gradient {worst_fd:.1e}, {:.2?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------------------
// SMOTE

fn random_imbalanced(rng: &mut Rng) -> FeatureTable {
    let classes = 2 + rng.index(3);
    let dims = 1 + rng.index(5);
    let mut rows = Vec::new();
    for s in 0..classes {
        let count = 2 + rng.index(7);
        let center: Vec<f64> = (0..dims).map(|_| 3.0 * rng.normal()).collect();
        for i in 0..count {
            let v = center.iter().map(|c| c + rng.normal()).collect();
            rows.push(FeatureVector::new(format!("c{s}_{i}"), SampleLabel::new(s, format!("c{s}")), v));
        }
    }
    FeatureTable::new(dims, rows).expect("valid table")
}

fn bits(t: &FeatureTable) -> Vec<(String, usize, Vec<u64>)> {
    t.rows()
        .iter()
        .map(|r| (r.sample_id.clone(), r.label.species_id, r.values.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn smote_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from(0x5307e);
    let mut synthetic = 0;
    let mut worst = 0.0f64;
    for run in 0..100u64 {
        let t = random_imbalanced(&mut rng);
        let cfg = SmoteConfig {
            k_neighbors: 1 + rng.index(5),
            seed: run,
            ..SmoteConfig::default()
        };
        let (out, synth) = rebalance_traced(&t, &cfg).map_err(|e| format!("run {run}: {e}"))?;
        for s in &synth {
            let (base, nb) = (&t.rows()[s.base], &t.rows()[s.neighbor]);
            ensure(base.label == nb.label && s.vector.label == base.label, || format!("run {run}: parents from different classes"))?;
            ensure(s.base != s.neighbor, || format!("run {run}: row paired with itself"))?;
            for ((v, a), b) in s.vector.values.iter().zip(&base.values).zip(&nb.values) {
                let excess = (a.min(*b) - v).max(v - a.max(*b)).max(0.0);
                worst = worst.max(excess);
            }
        }
        synthetic += synth.len();

        let mut counts = BTreeMap::new();
        for r in out.rows() {
            *counts.entry(r.label.species_id).or_insert(0) += 1;
        }
        let sizes: BTreeSet<usize> = counts.values().copied().collect();
        ensure(sizes.len() == 1, || format!("run {run}: class counts {counts:?} after rebalancing"))?;

        let (again, _) = rebalance_traced(&t, &cfg).map_err(|e| e.to_string())?;
        ensure(bits(&out) == bits(&again), || format!("run {run}: rerun with the same seed differs"))?;
    }
    ensure(worst <= tol::SMOTE_BETWEEN, || format!("betweenness violated by {worst:e}"))?;
    within_budget("SMOTE", start.elapsed(), tol::SMOTE_BUDGET)?;
    Ok(format!(
        "100 runs, {synthetic} synthetic rows; betweenness {worst:.1e}, balanced, bit-exact reruns, {:.2?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------------------
// Augmentation count law

fn count_law() -> Outcome {
    // 21 species, 2 to 7 originals each, 62 in total
    let mut counts = vec![2, 7];
    counts.extend([3; 15]);
    counts.extend([2; 4]);
    ensure(counts.iter().sum::<usize>() == 62, || "bad setup".into())?;
    let mut records = Vec::new();
    for (s, &n) in counts.iter().enumerate() {
        for i in 0..n {
            records.push(SampleRecord {
                sample_id: format!("s{s:02}_{i}"),
                label: SampleLabel::new(s, format!("sp{s:02}")),
                payload: Payload::Derived,
                provenance: Provenance::Original,
            });
        }
    }
    let m = DatasetManifest::from_records(records).map_err(|e| e.to_string())?;
    let angles = rotation_set(20.0, 5.0).map_err(|e| e.to_string())?;
    ensure(angles == [-20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0], || format!("angles {angles:?}"))?;
    let aug = augment_dataset(&m, &angles).map_err(|e| e.to_string())?;
    let rotated = aug.class_counts_of(taxaug::ProvenanceKind::Rotated);
    let total: usize = rotated.iter().sum();
    ensure(total == 496, || format!("{total} rotated records"))?;
    let (lo, hi) = (*rotated.iter().min().unwrap(), *rotated.iter().max().unwrap());
    ensure(lo == 16 && hi == 56, || format!("per-class rotated range {lo}..{hi}"))?;
    Ok(format!("62 originals x 8 angles = {total}; smallest class 2 -> {lo}"))
}

// ---------------------------------------------------------------------------
// Harness shape

fn fixture_cfg(flags: AugmentFlags) -> PipelineConfig {
    let mut cfg = PipelineConfig::new("fixture.csv", FeatureSource::External { table: "fixture.fvec".into() });
    cfg.flags = flags;
    cfg
}

const ALL: AugmentFlags = AugmentFlags {
    rotation: true,
    gan_ingest: true,
    smote: true,
};

fn harness_shape() -> Outcome {
    let fx = build_fixture(&FixtureSpec::standard());
    let cfg = fixture_cfg(ALL);
    ensure(cfg.folds.repeats == 10 && cfg.folds.k == 2, || "default protocol is not 10 x 2".into())?;
    let pooled = Ingested::new(fx.manifest.clone(), cfg.min_per_class)
        .and_then(|i| i.augment(&cfg))
        .and_then(|a| a.with_table(&fx.table))
        .map_err(|e| e.to_string())?;
    let serial = pooled.evaluate(&cfg, false).map_err(|e| e.to_string())?.report;
    ensure(serial.accuracies.len() == 20 && serial.splits.len() == 20, || {
        format!("{} accuracies from {} splits", serial.accuracies.len(), serial.splits.len())
    })?;

    let m = pooled.manifest();
    let plan = plan_folds(m, cfg.folds).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for split in plan.splits(m) {
        let mut per_class = vec![0usize; m.n_species()];
        for &i in &split.test {
            per_class[m.records()[i].label.species_id] += 1;
        }
        let originals = m.class_counts_of(taxaug::ProvenanceKind::Original);
        for (s, &n) in per_class.iter().enumerate() {
            worst = worst.max((n as f64 - originals[s] as f64 / plan.k as f64).abs());
        }
    }
    ensure(worst <= 1.0, || format!("stratification deviation {worst}"))?;

    let parallel_cfg = PipelineConfig { parallel: true, ..cfg.clone() };
    let mut parallel = pooled.evaluate(&parallel_cfg, false).map_err(|e| e.to_string())?.report;
    // the config echo records the flag itself
    parallel.config = serial.config.clone();
    ensure(serial.to_json() == parallel.to_json(), || "serial and parallel reports differ".into())?;
    Ok(format!("20 split accuracies; max stratification deviation {worst}; serial == parallel byte for byte"))
}

// ---------------------------------------------------------------------------
// Direction of effect

fn direction_of_effect() -> Outcome {
    let start = Instant::now();
    let fx = build_fixture(&FixtureSpec::standard());
    let cfg = fixture_cfg(AugmentFlags::default());
    let ingested = Ingested::new(fx.manifest.clone(), cfg.min_per_class).map_err(|e| e.to_string())?;
    let ab = ablate_with(ingested, &cfg, |aug| aug.with_table(&fx.table)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(ab.skipped.is_empty(), || format!("skipped rungs {:?}", ab.skipped))?;
    let base = ab.baseline().ok_or("no baseline rung")?;
    let full = ab.get(LADDER[3].name).ok_or("no full rung")?;
    let points = 100.0 * (full.mean_accuracy - base.mean_accuracy);
    let summary = format!(
        "baseline {:.2} %, full ladder {:.2} % (best CTV {}), gain {points:.2} points, {elapsed:.2?}",
        100.0 * base.mean_accuracy,
        100.0 * full.mean_accuracy,
        full.best_ctv
    );
    ensure(points >= tol::LADDER_MIN_POINTS, || format!("{summary}; below {}", tol::LADDER_MIN_POINTS))?;
    ensure(points >= tol::LADDER_FROZEN_POINTS - tol::LADDER_FROZEN_SLACK, || {
        format!("{summary}; regressed from the frozen {}", tol::LADDER_FROZEN_POINTS)
    })?;
    within_budget("ablation ladder", elapsed, tol::LADDER_BUDGET)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// CTV sweep

fn ctv_sweep() -> Outcome {
    let expected: Vec<u32> = (1..=10).map(|i| 10 * i).collect();
    ensure(CTV_GRID.to_vec() == expected, || format!("grid {CTV_GRID:?}"))?;
    validate_ctv_grid(&CTV_GRID).map_err(|e| e.to_string())?;
    ensure(validate_ctv_grid(&[10, 15]).is_err() && validate_ctv_grid(&[20, 10]).is_err(), || {
        "off-grid or descending levels accepted".into()
    })?;

    let fx = build_fixture(&FixtureSpec::standard());
    let mut rng = Rng::seed_from(0xc7);
    let mut models = vec![PcaModel::fit(&fx.table.matrix()).map_err(|e| e.to_string())?];
    for _ in 0..50 {
        let (n, d) = (2 + rng.index(12), 1 + rng.index(10));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|j| (j + 1) as f64 * rng.normal()).collect()).collect();
        models.push(PcaModel::fit(&Matrix::from_rows(&rows)).map_err(|e| e.to_string())?);
    }
    for (i, model) in models.iter().enumerate() {
        let ns: Vec<usize> = CTV_GRID.iter().map(|&c| components_for_ctv(model, c as f64)).collect();
        ensure(ns.windows(2).all(|w| w[0] <= w[1]), || format!("model {i}: components {ns:?} not monotone"))?;
        ensure(ns[0] >= 1 && *ns.last().unwrap() <= model.input_dims(), || format!("model {i}: components {ns:?} out of range"))?;
    }

    let flat = ctv_sweep_with(&CTV_GRID, |ctv| Ok((ctv as usize, 0.5))).map_err(|e| e.to_string())?;
    ensure(flat.best.ctv_percent == 10, || format!("constant accuracy picked CTV {}", flat.best.ctv_percent))?;
    let plateau = ctv_sweep_with(&CTV_GRID, |ctv| Ok((ctv as usize, if ctv >= 40 { 0.9 } else { 0.2 }))).map_err(|e| e.to_string())?;
    ensure(plateau.best.ctv_percent == 40, || format!("plateau picked CTV {}", plateau.best.ctv_percent))?;
    Ok(format!("grid 10..100 step 10; monotone over {} models; ties go to the smaller CTV", models.len()))
}

// ---------------------------------------------------------------------------
// CAM

fn cam() -> Outcome {
    let mut rng = Rng::seed_from(0xca3);
    let (c, h, w) = (16, 7, 7);
    let maps = FeatureMaps::new(c, h, w, (0..c * h * w).map(|_| rng.uniform()).collect()).map_err(|e| e.to_string())?;
    let w1: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
    let w2: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
    let (a, b) = (0.7, -1.3);
    let mixed: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
    let cam1 = compute_cam(&maps, &w1).map_err(|e| e.to_string())?;
    let cam2 = compute_cam(&maps, &w2).map_err(|e| e.to_string())?;
    let cam_mixed = compute_cam(&maps, &mixed).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for ((m, x), y) in cam_mixed.values().iter().zip(cam1.values()).zip(cam2.values()) {
        worst = worst.max((m - (a * x + b * y)).abs());
    }
    ensure(worst <= tol::CAM_LINEAR, || format!("linearity error {worst:e}"))?;

    let up = upscale_bilinear(&cam1, 224, 224).map_err(|e| e.to_string())?;
    ensure(up.min() >= cam1.min() && up.max() <= cam1.max(), || {
        format!("upscaled range [{}, {}] leaves [{}, {}]", up.min(), up.max(), cam1.min(), cam1.max())
    })?;
    for (x, y) in [(0, 0), (6, 0), (0, 6), (6, 6)] {
        let (ux, uy) = (x * 223 / 6, y * 223 / 6);
        ensure(up.get(ux, uy) == cam1.get(x, y), || format!("corner ({x}, {y}) not preserved"))?;
    }

    let small = ScalarMap::new(2, 2, vec![0.0, 2.0, 4.0, 6.0]).map_err(|e| e.to_string())?;
    let three = upscale_bilinear(&small, 3, 3).map_err(|e| e.to_string())?;
    let expected = [0.0, 1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0];
    ensure(three.values() == expected, || format!("2x2 -> 3x3 gave {:?}", three.values()))?;
    Ok(format!("linearity {worst:.1e}; 7x7 -> 224x224 stays in range; 2x2 -> 3x3 exact"))
}

// ---------------------------------------------------------------------------
// Leakage

/// Root original of a sample id: rotations map to their parent, SMOTE rows
/// to their base row.
fn root<'a>(m: &'a DatasetManifest, id: &'a str) -> &'a str {
    let id = id.split("#smote").next().unwrap_or(id);
    match m.get(id).and_then(|r| r.parent_id()) {
        Some(parent) => parent,
        None => id,
    }
}

/// Reads the manifest's split structure but cheats: the training set
/// includes the test originals.
struct Leaky;

impl Learner for Leaky {
    fn run_split(&self, m: &DatasetManifest, split: &Split, _seed: u64, trace: &mut SplitTrace) -> Result<SplitOutcome, BoxError> {
        let ids = |idx: &[usize]| idx.iter().map(|&i| m.records()[i].sample_id.clone()).collect::<Vec<_>>();
        trace.touch(Stage::Standardize, ids(&split.train));
        trace.touch(Stage::Standardize, ids(&split.test));
        trace.touch(Stage::Predict, ids(&split.test));
        Ok(SplitOutcome {
            per_ctv: vec![CtvOutcome {
                ctv_percent: 100,
                retained_components: 1,
                predicted: split.test.iter().map(|&i| m.records()[i].label.species_id).collect(),
            }],
            convergence_warnings: 0,
        })
    }
}

fn leakage() -> Outcome {
    let fx = build_fixture(&FixtureSpec::standard());
    let cfg = fixture_cfg(ALL);
    let pooled = Ingested::new(fx.manifest.clone(), cfg.min_per_class)
        .and_then(|i| i.augment(&cfg))
        .and_then(|a| a.with_table(&fx.table))
        .map_err(|e| e.to_string())?;
    let run = pooled.evaluate(&cfg, true).map_err(|e| e.to_string())?;
    let m = pooled.manifest();
    let plan = plan_folds(m, cfg.folds).map_err(|e| e.to_string())?;
    let splits = plan.splits(m);
    ensure(run.traces.len() == splits.len(), || format!("{} traces for {} splits", run.traces.len(), splits.len()))?;

    let mut touched = 0;
    for (split, trace) in splits.iter().zip(&run.traces) {
        let test: BTreeSet<&str> = split.test.iter().map(|&i| m.records()[i].sample_id.as_str()).collect();
        for stage in [Stage::Augment, Stage::PcaFit, Stage::Smote, Stage::Standardize, Stage::SvmTrain] {
            let ids: Vec<&str> = trace.touched(stage).collect();
            ensure(!ids.is_empty(), || format!("split {}/{}: stage {stage} not instrumented", split.repeat, split.fold))?;
            touched += ids.len();
            if let Some(id) = ids.iter().find(|id| test.contains(root(m, id))) {
                return Err(format!("split {}/{}: {id} (from a test original) used by {stage}", split.repeat, split.fold));
            }
        }
        let predicted: BTreeSet<&str> = trace.touched(Stage::Predict).collect();
        ensure(predicted == test, || format!("split {}/{}: predictions not exactly the test originals", split.repeat, split.fold))?;
    }

    let fold_opts = FoldOptions { repeats: 1, ..cfg.folds };
    let plan = plan_folds(m, fold_opts).map_err(|e| e.to_string())?;
    match cross_validate(&Leaky, m, &plan, &HarnessOptions::default()) {
        Err(EvalError::Leakage { .. }) => {}
        Err(e) => return Err(format!("leaky learner failed with {e}, expected a leakage error")),
        Ok(_) => return Err("leaky learner was not caught".into()),
    }
    Ok(format!(
        "{} instrumented splits, {touched} stage touches, no test original upstream of any fit; planted leak rejected",
        splits.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("pca-oracle", pca_oracle),
        ("svm-oracle", svm_oracle),
        ("smote-properties", smote_properties),
        ("augmentation-count-law", count_law),
        ("harness-shape", harness_shape),
        ("direction-of-effect", direction_of_effect),
        ("ctv-sweep", ctv_sweep),
        ("cam", cam),
        ("leakage-guard", leakage),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
