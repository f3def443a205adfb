//! Dense kernels shared by the fits and the eigen routines.

use faer::Mat;
use nalgebra::{Complex, DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{KoopError, Result};

/// Relative singular-value cutoff of the pseudo-inverse.
pub const RCOND: f64 = 1e-12;

const SCHUR_MAX_ITER: usize = 100_000;

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn to_faer_c(a: &DMatrix<Complex64>) -> Mat<Complex64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Minimum-norm least-squares solution of `a * x = b` through the SVD of `a`.
/// Singular values below `rcond * sigma_max` are treated as zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<(DMatrix<f64>, usize)> {
    if a.nrows() != b.nrows() {
        return Err(KoopError::InvalidInput(format!(
            "least squares row mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 {
        return Err(KoopError::InvalidInput("least squares with zero unknowns".into()));
    }
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    if a.nrows() == 0 {
        return Ok((x, 0));
    }
    let svd = to_faer(a).thin_svd().map_err(|_| KoopError::ConvergenceFailure)?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let s_max = (0..s.nrows()).map(|k| s[k]).fold(0.0, f64::max);
    let mut rank = 0;
    for k in 0..s.nrows() {
        if s_max == 0.0 || s[k] <= rcond * s_max {
            continue;
        }
        rank += 1;
        // x += v_k (u_k^T b) / s_k
        for j in 0..b.ncols() {
            let coeff = (0..a.nrows()).map(|i| u[(i, k)] * b[(i, j)]).sum::<f64>() / s[k];
            for r in 0..a.ncols() {
                x[(r, j)] += v[(r, k)] * coeff;
            }
        }
    }
    Ok((x, rank))
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_c(a: &DMatrix<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|v| Complex::new(v, 0.0))
}

/// Eigenvalues of a real matrix; real eigenvalues carry an exact `+0.0` imaginary part.
pub fn real_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(KoopError::ConvergenceFailure)?;
    Ok(schur.complex_eigenvalues().iter().cloned().collect())
}

pub fn complex_eigenvalues(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(KoopError::ConvergenceFailure)?;
    schur
        .eigenvalues()
        .map(|v| v.iter().cloned().collect())
        .ok_or(KoopError::ConvergenceFailure)
}

/// Right singular vectors of the `k` smallest singular values, with those values.
pub fn smallest_right_singular_vectors(b: &DMatrix<Complex64>, k: usize) -> Result<(Vec<DVector<Complex64>>, Vec<f64>)> {
    let svd = to_faer_c(b).svd().map_err(|_| KoopError::ConvergenceFailure)?;
    let v = svd.V();
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&i, &j| s[i].re.total_cmp(&s[j].re));
    let picked = &order[..k.min(order.len())];
    let vecs = picked
        .iter()
        .map(|&c| DVector::from_fn(v.nrows(), |r, _| v[(r, c)]))
        .collect();
    let vals = picked.iter().map(|&i| s[i].re).collect();
    Ok((vecs, vals))
}

/// 2-norm condition number via singular values; infinite for singular input.
pub fn condition_number(a: &DMatrix<Complex64>) -> f64 {
    let Ok(s) = to_faer_c(a).singular_values() else {
        return f64::INFINITY;
    };
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
