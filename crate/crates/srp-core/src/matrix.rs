//! Dense square matrices and the displacement-kernel (KMS-type) matrix
//! `A_{x,y} = e^{−β|x−y|}` over lattice sites.
//!
//! The KMS matrix plays two roles downstream: its permanent equals the
//! partition function of the permutation model, and it is simultaneously the
//! covariance of the Gaussian field used by the moment estimator. Both uses
//! index sites in the shared row-major order, which is what makes the two
//! routes comparable entry-for-entry.

use thiserror::Error;

use crate::lattice::LatticeBox;

/// Errors from matrix construction.
#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix data has length {found}, expected {expected}")]
    BadShape { expected: usize, found: usize },
    #[error("beta must be finite and nonnegative, got {0}")]
    BadBeta(f64),
}

/// Dense row-major square matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Wrap a row-major buffer of length n².
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if data.len() != n * n {
            return Err(MatrixError::BadShape {
                expected: n * n,
                found: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// Build from a function of (row, col).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Order of the matrix.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry (i, j).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Sum of row `i`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// The matrix with rows and columns simultaneously permuted:
    /// `B[i][j] = A[p[i]][p[j]]`.
    pub fn conjugated_by(&self, p: &[usize]) -> SquareMatrix {
        assert_eq!(p.len(), self.n);
        SquareMatrix::from_fn(self.n, |i, j| self.get(p[i], p[j]))
    }
}

/// The displacement-kernel matrix `A_{x,y} = e^{−β|x−y|}` on the sites of a
/// box, in row-major site order.
///
/// Symmetric, unit diagonal, entries in (0, 1], and strictly positive
/// definite for every β > 0 (it is the covariance of a stationary field with
/// exponential correlation). At β = 0 it degenerates to the all-ones matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KmsMatrix {
    matrix: SquareMatrix,
    beta: f64,
}

impl KmsMatrix {
    /// Build the matrix for a box at inverse temperature β ≥ 0.
    pub fn build(lattice: &LatticeBox, beta: f64) -> Result<Self, MatrixError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(MatrixError::BadBeta(beta));
        }
        let n = lattice.n_sites();
        // Fill the upper triangle and mirror: guarantees exact symmetry and
        // an exact unit diagonal regardless of how distance rounds.
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let v = (-beta * lattice.distance(i, j)).exp();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(Self {
            matrix: SquareMatrix { n, data },
            beta,
        })
    }

    /// The dense matrix.
    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// Generating inverse temperature.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Order (= number of sites of the generating box).
    pub fn n(&self) -> usize {
        self.matrix.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_matrix_entries() {
        let b = LatticeBox::new(1, 2).unwrap();
        let a = KmsMatrix::build(&b, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        assert_eq!(a.matrix().get(0, 0), 1.0);
        assert_eq!(a.matrix().get(1, 1), 1.0);
        assert_eq!(a.matrix().get(0, 1), e1);
        assert_eq!(a.matrix().get(1, 0), e1);
    }

    #[test]
    fn beta_zero_gives_all_ones() {
        let b = LatticeBox::new(1, 3).unwrap();
        let a = KmsMatrix::build(&b, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.matrix().get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn d2_matrix_has_adjacent_and_diagonal_decay() {
        let b = LatticeBox::new(2, 2).unwrap();
        let a = KmsMatrix::build(&b, 1.0).unwrap();
        let adjacent = (-1.0f64).exp();
        let diagonal = (-2.0f64.sqrt()).exp();
        // Sites in row-major order: (1,1), (1,2), (2,1), (2,2).
        assert_eq!(a.matrix().get(0, 1), adjacent);
        assert_eq!(a.matrix().get(0, 2), adjacent);
        assert_eq!(a.matrix().get(0, 3), diagonal);
        assert_eq!(a.matrix().get(1, 2), diagonal);
    }

    #[test]
    fn symmetry_and_range() {
        let b = LatticeBox::new(2, 3).unwrap();
        let a = KmsMatrix::build(&b, 0.7).unwrap();
        let n = a.n();
        for i in 0..n {
            assert_eq!(a.matrix().get(i, i), 1.0);
            for j in 0..n {
                let v = a.matrix().get(i, j);
                assert_eq!(v, a.matrix().get(j, i));
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn rejects_bad_beta() {
        let b = LatticeBox::new(1, 2).unwrap();
        assert!(KmsMatrix::build(&b, -1.0).is_err());
        assert!(KmsMatrix::build(&b, f64::INFINITY).is_err());
    }
}
