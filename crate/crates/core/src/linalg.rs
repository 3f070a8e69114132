//! Dense symmetric-matrix primitives.
//!
//! [`SymMatrix`] stores a full (not packed) `d x d` matrix and guarantees exact
//! symmetry: every constructor either checks it or enforces it by averaging
//! with the transpose. Spectral routines go through nalgebra's symmetric
//! eigensolver.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// General dense square (or rectangular) matrix.
pub type Matrix = DMatrix<f64>;

/// Convergence threshold handed to the symmetric eigensolver.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Relative tolerance (against the operator norm) below zero that an
/// eigenvalue may reach before a matrix is rejected as not PSD.
pub const PSD_TOLERANCE: f64 = 1e-8;

const EIGEN_MAX_ITER: usize = 10_000;

/// Real vector of dimension at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(DVector<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("vector"));
        }
        Ok(Self(DVector::from_vec(entries)))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "vector dimension must be at least 1");
        Self(DVector::zeros(dim))
    }

    /// The `i`-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.dot(&other.0))
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(&self.0 * c)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl From<DVector<f64>> for Vector {
    fn from(v: DVector<f64>) -> Self {
        assert!(!v.is_empty(), "vector dimension must be at least 1");
        Self(v)
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0.as_slice().to_vec()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dense symmetric `d x d` real matrix, `d >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a matrix that must already be exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Empty("matrix"));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::Empty("matrix"));
        }
        for r in rows {
            if r.len() != d {
                return Err(Error::NotSquare {
                    rows: d,
                    cols: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Builds a matrix from its upper triangle: `f(i, j)` is called for `i <= j`.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self(DMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        Self::identity(dim).scale(c)
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("diagonal"));
        }
        Ok(Self(DMatrix::from_diagonal(&DVector::from_column_slice(
            entries,
        ))))
    }

    /// `v v^T`.
    pub fn outer(v: &Vector) -> Self {
        let x = v.as_slice();
        Self::from_upper_fn(x.len(), |i, j| x[i] * x[j])
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn try_add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn try_sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(SymMatrix(&self.0 - &other.0))
    }

    /// `self * p * self`, symmetrized against rounding.
    pub fn congruence(&self, p: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), p.dim())?;
        let prod = &self.0 * &p.0 * &self.0;
        Ok(symmetrize_unchecked(&prod))
    }

    pub fn mul_vec(&self, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.dim())?;
        Ok(Vector(&self.0 * v.as_dvector()))
    }

    /// `v^T A v`.
    pub fn quadratic_form(&self, v: &Vector) -> Result<f64> {
        check_dim(self.dim(), v.dim())?;
        Ok(v.as_dvector().dot(&(&self.0 * v.as_dvector())))
    }

    /// Inverse of a positive-definite matrix via Cholesky.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(symmetrize_unchecked(&chol.inverse()))
    }

    /// `ln det` of a positive-definite matrix.
    pub fn ln_det_pd(&self) -> Result<f64> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.clone().cholesky().is_some()
    }

    /// Eigenvalues (unsorted) and eigenvectors (columns).
    pub fn eigen(&self) -> Result<(DVector<f64>, Matrix)> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::EigenNonConvergence);
        }
        let eig = SymmetricEigen::try_new(self.0.clone(), EIGEN_TOLERANCE, EIGEN_MAX_ITER)
            .ok_or(Error::EigenNonConvergence)?;
        Ok((eig.eigenvalues, eig.eigenvectors))
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(self.eigen()?.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.try_add(rhs).expect("dimension mismatch in SymMatrix addition")
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.try_sub(rhs)
            .expect("dimension mismatch in SymMatrix subtraction")
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, c: f64) -> SymMatrix {
        self.scale(c)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn symmetrize_unchecked(p: &Matrix) -> SymMatrix {
    SymMatrix((p + p.transpose()) * 0.5)
}

/// Frobenius inner product `<A, B> = sum_ij A_ij B_ij`.
pub fn inner_product(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.0.dot(&b.0))
}

pub fn frobenius_norm(a: &SymMatrix) -> f64 {
    a.0.norm()
}

/// Largest absolute eigenvalue.
pub fn operator_norm(a: &SymMatrix) -> Result<f64> {
    let (lo, hi) = eigen_extremes(a)?;
    Ok(lo.abs().max(hi.abs()))
}

/// `(lambda_min, lambda_max)`.
pub fn eigen_extremes(a: &SymMatrix) -> Result<(f64, f64)> {
    let vals = a.eigenvalues()?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Symmetric PSD square root through the eigendecomposition. Eigenvalues in
/// `[-tol, 0)` are treated as zero; anything more negative is rejected.
pub fn sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let (vals, vecs) = a.eigen()?;
    let scale = vals.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = vals.map(|x| x.max(0.0).sqrt());
    let r = &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose();
    Ok(symmetrize_unchecked(&r))
}

/// `(P + P^T) / 2`.
pub fn symmetrize(p: &Matrix) -> Result<SymMatrix> {
    if p.nrows() != p.ncols() {
        return Err(Error::NotSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    if p.nrows() == 0 {
        return Err(Error::Empty("matrix"));
    }
    Ok(symmetrize_unchecked(p))
}

/// PSD check with the same tolerance as [`sqrt_psd`].
pub fn is_psd(a: &SymMatrix) -> Result<bool> {
    let (lo, hi) = eigen_extremes(a)?;
    Ok(lo >= -PSD_TOLERANCE * lo.abs().max(hi.abs()))
}
