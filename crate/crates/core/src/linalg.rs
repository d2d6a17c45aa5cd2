//! Dense symmetric-matrix kernels: eigen-based square roots, Lyapunov solves
//! and small inverse helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math::{abs, sqrt};

/// Eigenvalues below this are clamped before square roots are taken.
pub const EIGEN_CLAMP: f64 = 1e-14;
/// Relative symmetry tolerance for SPD inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for an SPD point.
pub const MIN_EIGENVALUE: f64 = 1e-12;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max(abs(a[(i, j)] - a[(j, i)]));
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(a));
        let n = eig.eigenvalues.len();
        let mut order: alloc::vec::Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `U f(Λ) Uᵀ`, symmetrized.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        self.map(|l| sqrt(l.max(EIGEN_CLAMP)))
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.map(|l| 1.0 / sqrt(l.max(EIGEN_CLAMP)))
    }
}

pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    SymEigen::new(a).sqrt()
}

/// Solves `L S + S L = V` for symmetric `V`, given the eigendecomposition of `S`.
pub fn lyapunov_with(eig: &SymEigen, v: &DMatrix<f64>) -> DMatrix<f64> {
    let u = &eig.vectors;
    let vt = u.transpose() * v * u;
    let n = vt.nrows();
    let lt = DMatrix::from_fn(n, n, |i, j| vt[(i, j)] / (eig.values[i] + eig.values[j]));
    symmetrize(&(u * lt * u.transpose()))
}

pub fn lyapunov(s: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    lyapunov_with(&SymEigen::new(s), v)
}

/// Validates symmetry and positive definiteness, returning the symmetrized copy.
pub fn check_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = a.iter().fold(1.0f64, |m, x| m.max(abs(*x)));
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let s = symmetrize(a);
    let lmin = SymEigen::new(&s).min();
    if lmin <= MIN_EIGENVALUE {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: lmin });
    }
    Ok(s)
}

/// Spectral condition number of a square matrix via singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Inverse of a square matrix, refusing when the condition number exceeds `max_condition`.
pub fn checked_inverse(a: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > max_condition {
        return Err(Error::SingularMatrix { condition: cond });
    }
    a.clone().try_inverse().ok_or(Error::SingularMatrix { condition: cond })
}

/// `A⁻¹ S A⁻ᵀ`, symmetrized.
pub fn sandwich(a_inv: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(a_inv * s * a_inv.transpose()))
}

/// Covariance of row vectors with divisor `n`.
pub fn covariance(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += r;
    }
    if n > 0 {
        mean /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    if n > 0 {
        cov /= n as f64;
    }
    symmetrize(&cov)
}
