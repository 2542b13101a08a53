//! Principal component analysis and cumulative-trait-variation (CTV) selection.
//!
//! The covariance (divisor `n - 1`) is never formed in full. A pivoted
//! Cholesky pass over its columns finds a basis of its range, that basis is
//! orthonormalized by Householder QR, and the covariance projected onto it is
//! diagonalized with a symmetric tridiagonal-QR eigensolver. The Householder
//! factor also supplies the orthogonal complement, so the model always holds a
//! complete orthonormal basis; complement directions carry eigenvalue 0.
//!
//! Each component is sign-normalized so its largest-magnitude coefficient is
//! positive (first such coefficient on ties).
//!
//! `PCA1` blob layout, little-endian:
//!
//! ```text
//! "PCA1"  u32 input_dims  u32 n_components  u32 rank
//! f64 mean[input_dims]
//! f64 eigenvalues[n_components]
//! f64 explained_ratio[n_components]
//! f64 components[n_components][input_dims]
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::features::{FeatureTable, FeatureVector};
use crate::linalg::{axpy, householder_basis, Matrix};

/// Residual variance, relative to the largest coordinate variance, below which
/// a direction is treated as carrying no variance.
const RANK_TOLERANCE: f64 = 1e-12;

/// Slack on the cumulative-ratio comparison in [`components_for_ctv`].
const CTV_SLACK: f64 = 1e-9;

/// The evaluation grid: 10 % to 100 % in steps of 10 %.
pub const CTV_GRID: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("{requested} components requested, model holds {available}")]
    TooManyComponents { requested: usize, available: usize },
    #[error("invalid PCA1 blob: {0}")]
    Blob(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dims: usize,
    mean: Vec<f64>,
    /// rows are principal directions, descending eigenvalue
    components: Matrix,
    eigenvalues: Vec<f64>,
    explained_ratio: Vec<f64>,
    rank: usize,
}

pub fn fit_pca(t: &FeatureTable) -> Result<PcaModel, PcaError> {
    PcaModel::fit(&t.matrix())
}

impl PcaModel {
    /// Fits on the rows of `x` (samples x features).
    pub fn fit(x: &Matrix) -> Result<Self, PcaError> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(PcaError::Degenerate(format!("{n} row(s), at least 2 required")));
        }
        if d == 0 {
            return Err(PcaError::Degenerate("zero-dimensional rows".into()));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(PcaError::Degenerate("non-finite value".into()));
        }
        let denom = (n - 1) as f64;
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            axpy(1.0, row, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = x.clone();
        for i in 0..n {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
                *v -= m;
            }
        }

        let mut residual = vec![0.0; d];
        for row in centered.iter_rows() {
            for (r, v) in residual.iter_mut().zip(row) {
                *r += v * v;
            }
        }
        residual.iter_mut().for_each(|r| *r /= denom);
        let max_var = residual.iter().cloned().fold(0.0, f64::max);
        if max_var <= 0.0 {
            return Err(PcaError::Degenerate("all rows are identical".into()));
        }
        let tol = max_var * RANK_TOLERANCE;

        // pivoted Cholesky on the implicit covariance
        let max_rank = d.min(n - 1);
        let mut used = vec![false; d];
        let mut factor: Vec<Vec<f64>> = Vec::new();
        while factor.len() < max_rank {
            let mut pivot = None;
            let mut best = tol;
            for j in 0..d {
                if !used[j] && residual[j] > best {
                    best = residual[j];
                    pivot = Some(j);
                }
            }
            let Some(p) = pivot else { break };
            let mut col = vec![0.0; d];
            for row in centered.iter_rows() {
                if row[p] != 0.0 {
                    axpy(row[p], row, &mut col);
                }
            }
            col.iter_mut().for_each(|c| *c /= denom);
            for prev in &factor {
                axpy(-prev[p], prev, &mut col);
            }
            let scale = best.sqrt();
            col.iter_mut().for_each(|c| *c /= scale);
            for j in 0..d {
                residual[j] -= col[j] * col[j];
            }
            used[p] = true;
            factor.push(col);
        }
        let r = factor.len();
        let basis = householder_basis(&factor, d);

        // covariance restricted to the range basis: (Xc Q_r)^T (Xc Q_r) / (n - 1)
        let mut q_r = Matrix::zeros(d, r);
        for i in 0..d {
            q_r.row_mut(i).copy_from_slice(&basis.row(i)[..r]);
        }
        let scores = centered.matmul(&q_r);
        let mut reduced = DMatrix::<f64>::zeros(r, r);
        for row in scores.iter_rows() {
            for a in 0..r {
                for b in a..r {
                    reduced[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..r {
            for b in a..r {
                let v = reduced[(a, b)] / denom;
                reduced[(a, b)] = v;
                reduced[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(reduced);
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut components = Matrix::zeros(d, d);
        let mut eigenvalues = Vec::with_capacity(d);
        for (k, &idx) in order.iter().enumerate() {
            let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let out = components.row_mut(k);
            for i in 0..d {
                out[i] = crate::linalg::dot(q_r.row(i), &v);
            }
            normalize_sign(out);
            eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        }
        for k in r..d {
            let out = components.row_mut(k);
            for i in 0..d {
                out[i] = basis[(i, k)];
            }
            normalize_sign(out);
            eigenvalues.push(0.0);
        }
        let total: f64 = eigenvalues.iter().sum();
        let explained_ratio = eigenvalues.iter().map(|l| l / total).collect();
        Ok(Self {
            input_dims: d,
            mean,
            components,
            eigenvalues,
            explained_ratio,
            rank: r,
        })
    }

    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    /// Number of directions carrying variance above the rank tolerance.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, k: usize) -> &[f64] {
        self.components.row(k)
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn explained_ratio(&self) -> &[f64] {
        &self.explained_ratio
    }

    fn check(&self, dims: usize, n: usize) -> Result<(), PcaError> {
        if dims != self.input_dims {
            return Err(PcaError::Shape {
                expected: self.input_dims,
                found: dims,
            });
        }
        if n > self.n_components() {
            return Err(PcaError::TooManyComponents {
                requested: n,
                available: self.n_components(),
            });
        }
        Ok(())
    }

    /// Scores of one row on the leading `n` components.
    pub fn project(&self, x: &[f64], n: usize) -> Result<Vec<f64>, PcaError> {
        self.check(x.len(), n)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..n).map(|k| crate::linalg::dot(self.components.row(k), &centered)).collect())
    }

    /// Scores of every row of `x` on the leading `n` components.
    pub fn project_matrix(&self, x: &Matrix, n: usize) -> Result<Matrix, PcaError> {
        self.check(x.cols(), n)?;
        let mut out = Matrix::zeros(x.rows(), n);
        let mut centered = vec![0.0; self.input_dims];
        for i in 0..x.rows() {
            for ((c, a), m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = a - m;
            }
            let row = out.row_mut(i);
            for (k, s) in row.iter_mut().enumerate() {
                *s = crate::linalg::dot(self.components.row(k), &centered);
            }
        }
        Ok(out)
    }

    /// Maps scores on the leading `scores.len()` components back to input space.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>, PcaError> {
        if scores.len() > self.n_components() {
            return Err(PcaError::TooManyComponents {
                requested: scores.len(),
                available: self.n_components(),
            });
        }
        let mut out = self.mean.clone();
        for (k, &s) in scores.iter().enumerate() {
            axpy(s, self.components.row(k), &mut out);
        }
        Ok(out)
    }

    /// Maps a weight vector over the leading components back to input
    /// coordinates: `sum_k w[k] * component_k`.
    pub fn back_project(&self, weights: &[f64]) -> Result<Vec<f64>, PcaError> {
        if weights.len() > self.n_components() {
            return Err(PcaError::TooManyComponents {
                requested: weights.len(),
                available: self.n_components(),
            });
        }
        let mut out = vec![0.0; self.input_dims];
        for (k, &w) in weights.iter().enumerate() {
            axpy(w, self.components.row(k), &mut out);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, n) = (self.input_dims, self.n_components());
        let mut out = Vec::with_capacity(16 + 8 * (d + 2 * n + n * d));
        out.extend_from_slice(b"PCA1");
        for v in [d as u32, n as u32, self.rank as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let floats = self
            .mean
            .iter()
            .chain(&self.eigenvalues)
            .chain(&self.explained_ratio)
            .chain(self.components.as_slice());
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PcaError> {
        if bytes.len() < 16 || &bytes[..4] != b"PCA1" {
            return Err(PcaError::Blob("missing PCA1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (d, n, rank) = (word(0), word(1), word(2));
        let expected = 16 + 8 * (d + 2 * n + n * d);
        if bytes.len() != expected {
            return Err(PcaError::Blob(format!("{} bytes, expected {expected}", bytes.len())));
        }
        let floats: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (mean, rest) = floats.split_at(d);
        let (eigenvalues, rest) = rest.split_at(n);
        let (ratio, comps) = rest.split_at(n);
        Ok(Self {
            input_dims: d,
            mean: mean.to_vec(),
            components: Matrix::from_vec(n, d, comps.to_vec()),
            eigenvalues: eigenvalues.to_vec(),
            explained_ratio: ratio.to_vec(),
            rank,
        })
    }
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0.0;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Projects every row of `t` onto the leading `n_components` directions.
pub fn transform(m: &PcaModel, t: &FeatureTable, n_components: usize) -> Result<FeatureTable, PcaError> {
    let scores = m.project_matrix(&t.matrix(), n_components)?;
    let rows = t
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| FeatureVector {
            sample_id: r.sample_id.clone(),
            label: r.label.clone(),
            provenance: r.provenance.clone(),
            values: scores.row(i).to_vec(),
        })
        .collect();
    Ok(FeatureTable::new(n_components, rows).expect("projection keeps table invariants"))
}

/// Smallest `N >= 1` whose cumulative explained ratio reaches `ctv_percent`.
pub fn components_for_ctv(m: &PcaModel, ctv_percent: f64) -> usize {
    components_for_ratio(m.explained_ratio(), ctv_percent)
}

pub(crate) fn components_for_ratio(ratios: &[f64], ctv_percent: f64) -> usize {
    let target = ctv_percent / 100.0 - CTV_SLACK;
    let mut cumulative = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target {
            return k + 1;
        }
    }
    ratios.len().max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CtvEntry {
    pub ctv_percent: u32,
    pub retained_components: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CtvSweepResult {
    pub entries: Vec<CtvEntry>,
    pub best: CtvEntry,
}

#[derive(Debug, Error)]
pub enum CtvError {
    #[error("invalid CTV grid: {0}")]
    Grid(String),
    #[error("evaluation at CTV {ctv}% failed: {source}")]
    Eval {
        ctv: u32,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("retained components decrease from {previous} to {found} at CTV {ctv}%")]
    NonMonotone { ctv: u32, previous: usize, found: usize },
}

/// Checks that `grid` is a nonempty ascending subset of [`CTV_GRID`].
pub fn validate_ctv_grid(grid: &[u32]) -> Result<(), CtvError> {
    if grid.is_empty() {
        return Err(CtvError::Grid("empty grid".into()));
    }
    if let Some(bad) = grid.iter().find(|c| !CTV_GRID.contains(c)) {
        return Err(CtvError::Grid(format!("{bad} is not one of 10, 20, ..., 100")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CtvError::Grid("grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Evaluates each CTV level of `grid` through `eval`, which returns the
/// retained dimensionality and mean accuracy for that level. Ties on accuracy
/// go to the smaller CTV.
pub fn ctv_sweep_with<F>(grid: &[u32], mut eval: F) -> Result<CtvSweepResult, CtvError>
where
    F: FnMut(u32) -> Result<(usize, f64), Box<dyn std::error::Error + Send + Sync>>,
{
    validate_ctv_grid(grid)?;
    let mut entries: Vec<CtvEntry> = Vec::with_capacity(grid.len());
    for &ctv in grid {
        let (retained, acc) = eval(ctv).map_err(|source| CtvError::Eval { ctv, source })?;
        if let Some(prev) = entries.last() {
            if retained < prev.retained_components {
                return Err(CtvError::NonMonotone {
                    ctv,
                    previous: prev.retained_components,
                    found: retained,
                });
            }
        }
        entries.push(CtvEntry {
            ctv_percent: ctv,
            retained_components: retained,
            mean_accuracy: acc,
        });
    }
    let mut best = entries[0];
    for e in &entries[1..] {
        if e.mean_accuracy > best.mean_accuracy {
            best = *e;
        }
    }
    Ok(CtvSweepResult { entries, best })
}

/// Sweeps `grid` for a fitted model; `eval` receives the retained
/// dimensionality and returns a mean accuracy.
pub fn ctv_sweep<F>(m: &PcaModel, grid: &[u32], mut eval: F) -> Result<CtvSweepResult, CtvError>
where
    F: FnMut(usize) -> Result<f64, Box<dyn std::error::Error + Send + Sync>>,
{
    ctv_sweep_with(grid, |ctv| {
        let n = components_for_ctv(m, ctv as f64);
        eval(n).map(|acc| (n, acc))
    })
}
