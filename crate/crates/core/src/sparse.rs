//! Minimal compressed-row storage plus sparse direct factorizations.
//!
//! Assembly and matrix–vector products use [`CsrMatrix`]; the sparse Cholesky
//! factorization of SPD blocks is delegated to `faer`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("sparse matrix construction failed: {0}")]
    Build(String),
    #[error("Cholesky factorization failed (matrix not positive definite?): {0}")]
    Cholesky(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            let mut iter = row.iter().peekable();
            while let Some(&(c, mut v)) = iter.next() {
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|e| e.0 == c).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * x[c]).sum::<f64>())
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= s;
        }
        out
    }

    /// Submatrix on the given rows and columns, where `row_map[i]` /
    /// `col_map[j]` give the new index (or `None` to drop).
    pub fn restrict(
        &self,
        row_map: &[Option<usize>],
        nrows: usize,
        col_map: &[Option<usize>],
        ncols: usize,
    ) -> Self {
        let trip: Vec<(usize, usize, f64)> = self
            .triplets()
            .filter_map(|(r, c, v)| Some((row_map[r]?, col_map[c]?, v)))
            .collect();
        Self::from_triplets(nrows, ncols, &trip)
    }

    /// Largest `|A_ij − A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut worst: f64 = 0.0;
        for (r, c, v) in self.triplets() {
            worst = worst.max((v - self.get(c, r)).abs());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, FactorError> {
        let trip: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| FactorError::Build(format!("{e:?}")))
    }
}

/// A reusable sparse Cholesky factorization.
pub struct Factorization(faer::sparse::linalg::solvers::Llt<usize, f64>);

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Factorization")
    }
}

impl Factorization {
    pub fn cholesky(a: &CsrMatrix) -> Result<Self, FactorError> {
        let m = a.to_faer()?;
        m.sp_cholesky(Side::Lower)
            .map(Factorization)
            .map_err(|e| FactorError::Cholesky(format!("{e:?}")))
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.0.solve_in_place(b.as_mut());
        (0..rhs.len()).map(|i| b[(i, 0)]).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Clamps round-off negatives to zero while letting NaN through, unlike
/// `f64::max`.
pub(crate) trait NonNeg {
    fn nonneg(self) -> f64;
}

impl NonNeg for f64 {
    #[inline]
    fn nonneg(self) -> f64 {
        if self < 0.0 {
            0.0
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_multiply() {
        let a =
            CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (0, 0, 3.0), (1, 1, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]), vec![10.0, -2.0]);
        assert_eq!(a.matvec_transpose(&[1.0, 1.0]), vec![4.0, -1.0, 2.0]);
    }

    #[test]
    fn cholesky_solves_and_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 4.0),
                (1, 1, 3.0),
                (2, 2, 2.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
            ],
        );
        let b = [1.0, 2.0, 3.0];
        let x = Factorization::cholesky(&a).unwrap().solve(&b);
        let r = a.matvec(&x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-14);
        }
        let indefinite = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(Factorization::cholesky(&indefinite).is_err());
    }
}
