//! Least-squares operator fits on a dictionary: the log-free generator
//! matrix, the Koopman matrix, and the matrix-logarithm baseline built from it.

pub mod linalg;

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{GenConfig, SamplePlan, TrainingSet};
use crate::dictionary::{analytic_generator_apply, Dictionary, WeightVector};
use crate::dynamics::{Flow, VectorField};
use crate::error::{KoopError, Result};
use linalg::{frobenius, lstsq, RCOND};

/// Fitted matrix `L` with `Z_N(x)(L w) ~ L~_lambda (Z_N w)(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
    pub config: Option<GenConfig>,
    pub basis_id: String,
    /// `||Y - X L||_F`.
    pub residual: f64,
    pub rank_used: usize,
    /// `DegenerateFeatures` when the feature matrix was rank deficient.
    pub warning: Option<KoopError>,
}

impl GeneratorMatrix {
    /// Wraps a matrix obtained outside the data pipeline (e.g. an analytic generator).
    pub fn from_matrix(matrix: DMatrix<f64>, basis_id: impl Into<String>) -> Result<Self> {
        if !matrix.is_square() || matrix.iter().any(|v| !v.is_finite()) {
            return Err(KoopError::InvalidInput("generator matrix must be square and finite".into()));
        }
        let n = matrix.nrows();
        Ok(Self {
            matrix,
            config: None,
            basis_id: basis_id.into(),
            residual: 0.0,
            rank_used: n,
            warning: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanMatrix {
    pub matrix: DMatrix<f64>,
    /// Sampling time `s`.
    pub s: f64,
    pub basis_id: String,
    pub residual: f64,
    pub rank_used: usize,
    pub warning: Option<KoopError>,
}

fn degenerate_warning(rank: usize, columns: usize) -> Option<KoopError> {
    (rank < columns).then_some(KoopError::DegenerateFeatures { rank, columns })
}

fn check_fit_shapes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(KoopError::InvalidInput(format!(
            "feature shape {:?} differs from label shape {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.nrows() < x.ncols() {
        return Err(KoopError::InvalidInput(format!(
            "need at least N={} samples, got {}",
            x.ncols(),
            x.nrows()
        )));
    }
    Ok(())
}

fn fit_square(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, usize)> {
    check_fit_shapes(x, y)?;
    let (a, rank) = lstsq(x, y, RCOND)?;
    let residual = frobenius(&(y - x * &a));
    Ok((a, residual, rank))
}

/// `L = argmin ||Y - X A||_F`, minimum-norm, via the SVD of `X`.
pub fn fit_generator(ts: &TrainingSet) -> Result<GeneratorMatrix> {
    let (matrix, residual, rank_used) = fit_square(&ts.features, &ts.labels)?;
    Ok(GeneratorMatrix {
        warning: degenerate_warning(rank_used, matrix.ncols()),
        matrix,
        config: Some(ts.config),
        basis_id: ts.basis_id.clone(),
        residual,
        rank_used,
    })
}

/// Koopman matrix fitted from raw pairs `(Z_N(x), Z_N(phi(s, x)))`.
pub fn fit_koopman_from_pairs(
    features: &DMatrix<f64>,
    flowed: &DMatrix<f64>,
    s: f64,
    basis_id: impl Into<String>,
) -> Result<KoopmanMatrix> {
    let (matrix, residual, rank_used) = fit_square(features, flowed)?;
    Ok(KoopmanMatrix {
        warning: degenerate_warning(rank_used, matrix.ncols()),
        matrix,
        s,
        basis_id: basis_id.into(),
        residual,
        rank_used,
    })
}

/// `K = argmin ||Y~ - X A||_F` with rows of `Y~` equal to `Z_N(phi(s, x))`.
pub fn fit_koopman(flow: &Flow, dict: &Dictionary, plan: &SamplePlan, s: f64) -> Result<KoopmanMatrix> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(KoopError::InvalidInput(format!("sampling time must be positive, got {s}")));
    }
    let points = plan.samples()?;
    let flowed: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| flow.flow_to(x, s))
        .collect::<Result<_>>()?;
    let n = dict.len();
    let mut features = DMatrix::zeros(points.len(), n);
    let mut labels = DMatrix::zeros(points.len(), n);
    for (r, (x, y)) in points.iter().zip(&flowed).enumerate() {
        features.row_mut(r).copy_from_slice(&dict.evaluate(x));
        labels.row_mut(r).copy_from_slice(&dict.evaluate(y));
    }
    fit_koopman_from_pairs(&features, &labels, s, dict.basis_id())
}

/// Least-squares projection of the exact Lie derivatives of the dictionary
/// onto its span; no time integration involved.
pub fn project_lie_derivatives(field: &VectorField, dict: &Dictionary, plan: &SamplePlan) -> Result<GeneratorMatrix> {
    let points = plan.samples()?;
    let n = dict.len();
    let mut features = DMatrix::zeros(points.len(), n);
    let mut labels = DMatrix::zeros(points.len(), n);
    for (r, x) in points.iter().enumerate() {
        features.row_mut(r).copy_from_slice(&dict.evaluate(x));
        for (c, obs) in dict.entries().iter().enumerate() {
            labels[(r, c)] = analytic_generator_apply(field, obs, x);
        }
    }
    let (matrix, residual, rank_used) = fit_square(&features, &labels)?;
    Ok(GeneratorMatrix {
        warning: degenerate_warning(rank_used, n),
        matrix,
        config: None,
        basis_id: dict.basis_id().to_string(),
        residual,
        rank_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenSource {
    Generator,
    Koopman,
    LogBaseline,
    Other,
}

/// Eigenpairs sorted by descending real part, ties by descending imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<Complex64>,
    /// Unit-norm eigenvectors as columns, phase-fixed so the largest entry is real positive.
    pub vectors: DMatrix<Complex64>,
    pub source: EigenSource,
    /// `|A xi - mu xi| / ||A||_F` per pair.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenEntry {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub source: EigenSource,
    pub pairs: Vec<EigenEntry>,
    pub max_residual: f64,
}

impl EigenPairs {
    pub fn report(&self) -> EigenReport {
        EigenReport {
            source: self.source,
            pairs: self
                .values
                .iter()
                .zip(&self.residuals)
                .map(|(v, r)| EigenEntry {
                    re: v.re,
                    im: v.im,
                    residual: *r,
                })
                .collect(),
            max_residual: self.residuals.iter().cloned().fold(0.0, f64::max),
        }
    }
}

fn eigen_order(a: &Complex64, b: &Complex64) -> Ordering {
    b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im))
}

fn phase_fix(v: &mut DVector<Complex64>) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, c) in v.iter().enumerate() {
        let m = c.norm();
        // strict improvement needed to move, so near-ties resolve to the first index
        if m > best_mag * (1.0 + 1e-9) {
            best = i;
            best_mag = m;
        }
    }
    let phase = v[best].conj() / v[best].norm();
    for c in v.iter_mut() {
        *c = *c * phase / norm;
    }
}

fn eigenvectors_for(a: &DMatrix<Complex64>, mut values: Vec<Complex64>, source: EigenSource) -> Result<EigenPairs> {
    values.sort_by(eigen_order);
    let n = a.nrows();
    let scale = linalg::frobenius_c(a).max(f64::MIN_POSITIVE);
    let cluster_tol = 1e-7 * scale.max(1.0);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut assigned = vec![false; n];
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..n)
            .filter(|&j| !assigned[j] && (values[j] - values[i]).norm() <= cluster_tol)
            .collect();
        let centre = members.iter().map(|&j| values[j]).sum::<Complex64>() / members.len() as f64;
        let mut shifted = a.clone();
        for d in 0..n {
            shifted[(d, d)] -= centre;
        }
        let (vecs, _) = linalg::smallest_right_singular_vectors(&shifted, members.len())?;
        for (&j, mut v) in members.iter().zip(vecs) {
            phase_fix(&mut v);
            vectors.set_column(j, &v);
            assigned[j] = true;
        }
    }
    let residuals = (0..n)
        .map(|j| {
            let v = vectors.column(j);
            let r = a * v - v * values[j];
            r.norm() / scale
        })
        .collect();
    Ok(EigenPairs {
        values,
        vectors,
        source,
        residuals,
    })
}

/// Complex eigendecomposition of a real square matrix.
pub fn eigen(a: &DMatrix<f64>, source: EigenSource) -> Result<EigenPairs> {
    check_square_finite(a.nrows(), a.ncols(), a.iter().all(|v| v.is_finite()))?;
    let values = linalg::real_eigenvalues(a)?;
    eigenvectors_for(&linalg::to_complex(a), values, source)
}

/// Complex eigendecomposition of a complex square matrix.
pub fn eigen_complex(a: &DMatrix<Complex64>, source: EigenSource) -> Result<EigenPairs> {
    check_square_finite(a.nrows(), a.ncols(), a.iter().all(|v| v.re.is_finite() && v.im.is_finite()))?;
    let values = linalg::complex_eigenvalues(a)?;
    eigenvectors_for(a, values, source)
}

fn check_square_finite(r: usize, c: usize, finite: bool) -> Result<()> {
    if r != c || r == 0 {
        return Err(KoopError::InvalidInput(format!("expected a non-empty square matrix, got {r}x{c}")));
    }
    if !finite {
        return Err(KoopError::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogPolicy {
    /// Principal branch `arg in (-pi, pi]`; only (near-)zero eigenvalues are rejected.
    #[default]
    Principal,
    /// Additionally reject eigenvalues within `1e-10` of the negative real axis.
    RejectNegativeReal,
}

const BRANCH_TOL: f64 = 1e-10;
const MAX_EIGVEC_CONDITION: f64 = 1e12;
/// Relative eigen-residual above which a cluster lacks a full eigenbasis.
const DEFECT_RESIDUAL: f64 = 1e-8;

fn diagonalizing_basis(eig: &EigenPairs) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, f64)> {
    if eig.residuals.iter().any(|r| r.is_nan() || *r > DEFECT_RESIDUAL) {
        return Err(KoopError::NonDiagonalizable { condition: f64::INFINITY });
    }
    let v = eig.vectors.clone();
    let condition = linalg::condition_number(&v);
    if !condition.is_finite() || condition >= MAX_EIGVEC_CONDITION {
        return Err(KoopError::NonDiagonalizable { condition });
    }
    let v_inv = v.clone().try_inverse().ok_or(KoopError::NonDiagonalizable { condition })?;
    Ok((v, v_inv, condition))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDiagnostics {
    pub eigvec_condition: f64,
    pub max_abs_imag: f64,
    /// Real eigenvalues on the negative axis; each contributes `i*pi` to the log.
    pub negative_real_eigenvalues: usize,
    pub koopman_eigenvalues: Vec<Complex64>,
}

/// `(V diag(Log mu_i) V^{-1}) / s` from a Koopman matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGenerator {
    pub matrix: DMatrix<Complex64>,
    pub s: f64,
    pub basis_id: String,
    pub diagnostics: LogDiagnostics,
}

pub fn log_baseline(km: &KoopmanMatrix, policy: LogPolicy) -> Result<LogGenerator> {
    let eig = eigen(&km.matrix, EigenSource::Koopman)?;
    let mut negative_real = 0;
    for mu in &eig.values {
        if mu.norm() <= BRANCH_TOL {
            return Err(KoopError::BranchCut { re: mu.re, im: mu.im });
        }
        if mu.re < 0.0 && mu.im.abs() <= BRANCH_TOL {
            if policy == LogPolicy::RejectNegativeReal {
                return Err(KoopError::BranchCut { re: mu.re, im: mu.im });
            }
            negative_real += 1;
        }
    }
    let (v, v_inv, condition) = diagonalizing_basis(&eig)?;
    let logs = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|mu| {
            // a real eigenvalue on the negative axis takes arg = +pi
            let mu = if mu.im == 0.0 { Complex::new(mu.re, 0.0) } else { *mu };
            mu.ln()
        }),
    ));
    let matrix = (v * logs * v_inv) / Complex::new(km.s, 0.0);
    let max_abs_imag = matrix.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    Ok(LogGenerator {
        matrix,
        s: km.s,
        basis_id: km.basis_id.clone(),
        diagnostics: LogDiagnostics {
            eigvec_condition: condition,
            max_abs_imag,
            negative_real_eigenvalues: negative_real,
            koopman_eigenvalues: eig.values,
        },
    })
}

/// `exp(t A)` for a diagonalizable `A`, through its eigendecomposition.
pub fn matrix_exp_diagonalizable(a: &DMatrix<Complex64>, t: f64) -> Result<DMatrix<Complex64>> {
    let eig = eigen_complex(a, EigenSource::Other)?;
    let (v, v_inv, _) = diagonalizing_basis(&eig)?;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|mu| (mu * t).exp()),
    ));
    Ok(v * d * v_inv)
}

/// Operators that act on dictionary weight vectors.
pub trait WeightOperator {
    fn basis_id(&self) -> &str;
    fn complex_matrix(&self) -> DMatrix<Complex64>;
}

impl WeightOperator for GeneratorMatrix {
    fn basis_id(&self) -> &str {
        &self.basis_id
    }
    fn complex_matrix(&self) -> DMatrix<Complex64> {
        linalg::to_complex(&self.matrix)
    }
}

impl WeightOperator for KoopmanMatrix {
    fn basis_id(&self) -> &str {
        &self.basis_id
    }
    fn complex_matrix(&self) -> DMatrix<Complex64> {
        linalg::to_complex(&self.matrix)
    }
}

impl WeightOperator for LogGenerator {
    fn basis_id(&self) -> &str {
        &self.basis_id
    }
    fn complex_matrix(&self) -> DMatrix<Complex64> {
        self.matrix.clone()
    }
}

/// `A w`, keeping the basis of `w`.
pub fn apply_matrix_to_weights<A: WeightOperator + ?Sized>(a: &A, w: &WeightVector) -> Result<WeightVector> {
    let m = a.complex_matrix();
    w.check_basis(a.basis_id(), m.ncols())?;
    let v = DVector::from_column_slice(&w.coefficients);
    let out = m * v;
    Ok(WeightVector {
        coefficients: out.iter().cloned().collect(),
        basis_id: w.basis_id.clone(),
    })
}
