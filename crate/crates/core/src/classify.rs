//! Linear SVM with squared hinge loss, one-vs-rest.
//!
//! Binary problem, bias unregularized:
//!
//! ```text
//! f(w, b) = 1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))^2
//! ```
//!
//! `f` is convex and continuously differentiable. Two solvers minimize it,
//! both with Armijo backtracking: plain gradient descent, and a generalized
//! Newton method whose Hessian sums only the currently violating rows.
//! Newton is the default; it reaches the same optimum in a handful of
//! iterations, which matters when thousands of binary problems are solved
//! per experiment.

use thiserror::Error;

use crate::dataset::SampleLabel;
use crate::features::FeatureTable;
use crate::linalg::{cholesky_solve, dot, Matrix};

/// Armijo constants. The gradient step needs a stricter one: with a small
/// constant, a doubled step that barely decreases the objective is accepted
/// and the iterates oscillate across the optimum.
const ARMIJO_NEWTON: f64 = 1e-4;
const ARMIJO_GRADIENT: f64 = 0.3;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("species {0:?} has no training rows")]
    MissingClass(String),
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("invalid SVM1 blob: {0}")]
    Blob(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    GradientDescent,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub c: f64,
    /// stop once the gradient norm falls below this
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_iter: 500,
            solver: Solver::Newton,
        }
    }
}

/// Result of one binary training; `converged == false` is a convergence
/// warning and `(w, b)` is the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_inputs(x: &Matrix, y: &[f64], w: &[f64], b: f64, c: f64) -> Result<(), SvmError> {
    if y.len() != x.rows() {
        return Err(SvmError::Data(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    if w.len() != x.cols() {
        return Err(SvmError::Shape {
            expected: x.cols(),
            found: w.len(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::Data("labels must be +1 or -1".into()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(SvmError::Numeric(format!("penalty C = {c} must be positive and finite")));
    }
    let finite = x.as_slice().iter().chain(w).chain([&b]).all(|v| v.is_finite());
    if !finite {
        return Err(SvmError::Numeric("non-finite input".into()));
    }
    Ok(())
}

fn raw_objective(w: &[f64], b: f64, x: &Matrix, y: &[f64], c: f64) -> f64 {
    let mut loss = 0.0;
    for (row, &yi) in x.iter_rows().zip(y) {
        let m = (1.0 - yi * (dot(w, row) + b)).max(0.0);
        loss += m * m;
    }
    0.5 * dot(w, w) + c * loss
}

/// Gradient `(g_w, g_b)` of the objective.
fn raw_gradient(w: &[f64], b: f64, x: &Matrix, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (row, &yi) in x.iter_rows().zip(y) {
        let m = 1.0 - yi * (dot(w, row) + b);
        if m > 0.0 {
            let s = -2.0 * c * m * yi;
            crate::linalg::axpy(s, row, &mut gw);
            gb += s;
        }
    }
    (gw, gb)
}

pub fn objective(w: &[f64], b: f64, x: &Matrix, y: &[f64], c: f64) -> Result<f64, SvmError> {
    check_inputs(x, y, w, b, c)?;
    Ok(raw_objective(w, b, x, y, c))
}

pub fn gradient(w: &[f64], b: f64, x: &Matrix, y: &[f64], c: f64) -> Result<(Vec<f64>, f64), SvmError> {
    check_inputs(x, y, w, b, c)?;
    Ok(raw_gradient(w, b, x, y, c))
}

pub fn train_binary(x: &Matrix, y: &[f64], opts: &TrainOptions) -> Result<BinaryFit, SvmError> {
    train_binary_from(x, y, opts, &vec![0.0; x.cols()], 0.0)
}

/// [`train_binary`] started from `(w0, b0)`.
pub fn train_binary_from(x: &Matrix, y: &[f64], opts: &TrainOptions, w0: &[f64], b0: f64) -> Result<BinaryFit, SvmError> {
    check_inputs(x, y, w0, b0, opts.c)?;
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(SvmError::Data("both labels must be present".into()));
    }
    let c = opts.c;
    let d = x.cols();
    let mut w = w0.to_vec();
    let mut b = b0;
    let mut f = raw_objective(&w, b, x, y, c);
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    loop {
        let (gw, gb) = raw_gradient(&w, b, x, y, c);
        let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if !grad_norm.is_finite() {
            return Err(SvmError::Numeric("gradient diverged".into()));
        }
        if grad_norm < opts.tol || iterations >= opts.max_iter {
            return Ok(BinaryFit {
                w,
                b,
                objective: f,
                grad_norm,
                iterations,
                converged: grad_norm < opts.tol,
            });
        }
        iterations += 1;

        let mut dir: Vec<f64> = gw.iter().chain([&gb]).map(|g| -g).collect();
        let mut t0 = (2.0 * step).min(1e6);
        let mut armijo = ARMIJO_GRADIENT;
        if opts.solver == Solver::Newton {
            if let Some(p) = newton_direction(&w, b, x, y, c, &gw, gb) {
                dir = p;
                t0 = 1.0;
                armijo = ARMIJO_NEWTON;
            }
        }
        let slope = -(dot(&gw, &dir[..d]) + gb * dir[d]);
        let mut t = t0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let wt: Vec<f64> = w.iter().zip(&dir).map(|(a, p)| a + t * p).collect();
            let bt = b + t * dir[d];
            let ft = raw_objective(&wt, bt, x, y, c);
            let sufficient = ft <= f - armijo * t * slope;
            // near the optimum the predicted decrease drops below the rounding
            // error of f; fall back to requiring a smaller gradient
            let flat = armijo * t * slope <= 4.0 * f64::EPSILON * f.abs()
                && ft <= f + 4.0 * f64::EPSILON * f.abs()
                && {
                    let (gwt, gbt) = raw_gradient(&wt, bt, x, y, c);
                    (dot(&gwt, &gwt) + gbt * gbt).sqrt() < grad_norm
                };
            if sufficient || flat {
                w = wt;
                b = bt;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no representable decrease left; report where we stand
            let (gw, gb) = raw_gradient(&w, b, x, y, c);
            let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
            return Ok(BinaryFit {
                w,
                b,
                objective: f,
                grad_norm,
                iterations,
                converged: grad_norm < opts.tol,
            });
        }
        step = t;
    }
}

/// Solves `H p = -g` with the generalized Hessian; `None` if it is not
/// positive definite or the result is not a descent direction.
fn newton_direction(w: &[f64], b: f64, x: &Matrix, y: &[f64], c: f64, gw: &[f64], gb: f64) -> Option<Vec<f64>> {
    let d = x.cols();
    let n = d + 1;
    let mut h = Matrix::identity(n);
    {
        let hs = h.row_mut(d);
        hs[d] = 1e-10;
    }
    let mut ext = vec![0.0; n];
    let mut lower = vec![0.0; n * n];
    for (row, &yi) in x.iter_rows().zip(y) {
        if 1.0 - yi * (dot(w, row) + b) > 0.0 {
            ext[..d].copy_from_slice(row);
            ext[d] = 1.0;
            for i in 0..n {
                let s = 2.0 * c * ext[i];
                if s == 0.0 {
                    continue;
                }
                let li = &mut lower[i * n..i * n + i + 1];
                for (l, e) in li.iter_mut().zip(&ext[..=i]) {
                    *l += s * e;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = lower[i * n + j];
            h.row_mut(i)[j] += v;
            if i != j {
                h.row_mut(j)[i] += v;
            }
        }
    }
    let rhs: Vec<f64> = gw.iter().chain([&gb]).map(|g| -g).collect();
    let p = cholesky_solve(&h, &rhs)?;
    let descent = dot(&p, &rhs);
    (descent > 0.0 && p.iter().all(|v| v.is_finite())).then_some(p)
}

/// Per-feature affine map to zero mean, unit (population) variance, fitted on
/// training rows. Near-constant features keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows().max(1) as f64, x.cols());
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            crate::linalg::axpy(1.0, row, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((v, a), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (a - m) * (a - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    dims: usize,
    c: f64,
    standardizer: Standardizer,
    classes: Vec<SampleLabel>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    /// binary problems that hit `max_iter`
    unconverged: usize,
}

/// One-vs-rest over the classes present in `t`.
pub fn train_multiclass(t: &FeatureTable, opts: &TrainOptions) -> Result<SvmModel, SvmError> {
    let mut classes: Vec<SampleLabel> = Vec::new();
    for r in t.rows() {
        if !classes.iter().any(|c| c.species_id == r.label.species_id) {
            classes.push(r.label.clone());
        }
    }
    classes.sort_by_key(|c| c.species_id);
    train_multiclass_for(t, &classes, opts)
}

/// One-vs-rest over `classes`; each must have at least one row in `t`.
pub fn train_multiclass_for(t: &FeatureTable, classes: &[SampleLabel], opts: &TrainOptions) -> Result<SvmModel, SvmError> {
    if classes.len() < 2 {
        return Err(SvmError::Data(format!("{} class(es), at least 2 required", classes.len())));
    }
    let ids = t.species_ids();
    if let Some(missing) = classes.iter().find(|c| !ids.contains(&c.species_id)) {
        return Err(SvmError::MissingClass(missing.species_name.clone()));
    }
    let mut classes = classes.to_vec();
    classes.sort_by_key(|c| c.species_id);
    let raw = t.matrix();
    let standardizer = Standardizer::fit(&raw);
    let x = standardizer.apply_matrix(&raw);
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut unconverged = 0;
    for class in &classes {
        let y: Vec<f64> = ids.iter().map(|&s| if s == class.species_id { 1.0 } else { -1.0 }).collect();
        let fit = train_binary(&x, &y, opts)?;
        unconverged += usize::from(!fit.converged);
        weights.push(fit.w);
        biases.push(fit.b);
    }
    Ok(SvmModel {
        dims: t.dims(),
        c: opts.c,
        standardizer,
        classes,
        weights,
        biases,
        unconverged,
    })
}

impl SvmModel {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn penalty(&self) -> f64 {
        self.c
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[SampleLabel] {
        &self.classes
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Weights in standardized coordinates, one vector per class.
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn unconverged(&self) -> usize {
        self.unconverged
    }

    /// Weights and bias of class `k` acting on raw (unstandardized) inputs.
    pub fn effective_weights(&self, k: usize) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let w: Vec<f64> = self.weights[k].iter().zip(&s.scale).map(|(w, sc)| w / sc).collect();
        let b = self.biases[k] - dot(&w, &s.mean);
        (w, b)
    }

    /// Decision values `w_s . z + b_s` for every class.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        if x.len() != self.dims {
            return Err(SvmError::Shape {
                expected: self.dims,
                found: x.len(),
            });
        }
        let z = self.standardizer.apply(x);
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, &z) + b).collect())
    }

    /// Highest-scoring class; ties go to the lowest species id.
    pub fn predict(&self, x: &[f64]) -> Result<&SampleLabel, SvmError> {
        let scores = self.scores(x)?;
        Ok(&self.classes[argmax_first(&scores)])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SVM1");
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.unconverged as u32).to_le_bytes());
        let c = [self.c];
        let floats = c
            .iter()
            .chain(&self.standardizer.mean)
            .chain(&self.standardizer.scale)
            .chain(self.weights.iter().flatten())
            .chain(&self.biases);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.classes {
            out.extend_from_slice(&(c.species_id as u32).to_le_bytes());
            out.extend_from_slice(&(c.species_name.len() as u16).to_le_bytes());
            out.extend_from_slice(c.species_name.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SvmError> {
        let err = |m: &str| SvmError::Blob(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != b"SVM1" {
            return Err(err("missing SVM1 header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (s, d, unconverged) = (u32_at(4), u32_at(8), u32_at(12));
        let n_floats = 1 + 2 * d + s * d + s;
        let mut pos = 16;
        if bytes.len() < pos + 8 * n_floats {
            return Err(err("truncated payload"));
        }
        let floats: Vec<f64> = bytes[pos..pos + 8 * n_floats]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 8 * n_floats;
        let mut classes = Vec::with_capacity(s);
        for _ in 0..s {
            if bytes.len() < pos + 6 {
                return Err(err("truncated class table"));
            }
            let id = u32_at(pos);
            let len = u16::from_le_bytes([bytes[pos + 4], bytes[pos + 5]]) as usize;
            pos += 6;
            let name = bytes
                .get(pos..pos + len)
                .ok_or_else(|| err("truncated class name"))?;
            let name = std::str::from_utf8(name).map_err(|_| err("class name is not UTF-8"))?;
            classes.push(SampleLabel::new(id, name));
            pos += len;
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        let mut it = floats.into_iter();
        let c = it.next().unwrap();
        let mean: Vec<f64> = it.by_ref().take(d).collect();
        let scale: Vec<f64> = it.by_ref().take(d).collect();
        let weights: Vec<Vec<f64>> = (0..s).map(|_| it.by_ref().take(d).collect()).collect();
        let biases: Vec<f64> = it.collect();
        Ok(Self {
            dims: d,
            c,
            standardizer: Standardizer { mean, scale },
            classes,
            weights,
            biases,
            unconverged,
        })
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}
