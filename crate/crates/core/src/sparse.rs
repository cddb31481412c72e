//! Compressed sparse row storage and the constant linear operators that feed
//! the differentiation tape.
//!
//! Every left-hand matrix the model multiplies by without differentiating it
//! (normalized adjacencies, filtered similarity matrices, the zero-filled
//! attribute matrix) implements [`LinearOperator`].

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Result, SagaError};

/// A constant matrix that can multiply a dense matrix from the left.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `self · rhs`
    fn apply(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64>;
    /// `selfᵀ · rhs`
    fn apply_transpose(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64>;
}

/// Row-compressed sparse matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate positions are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SagaError::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            rows[r].push((c, v));
        }
        Ok(Self::from_rows(nrows, ncols, rows))
    }

    fn from_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
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

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keeps the entries of `dense` that are not exactly zero.
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (nrows, ncols) = dense.dim();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.outer_iter() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
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

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn fill_ratio(&self) -> f64 {
        if self.nrows == 0 || self.ncols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.nrows as f64 * self.ncols as f64)
    }

    /// Column indices and values stored in row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (i, j, v) in self.iter() {
            out[[i, j]] += v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for (i, j, v) in self.iter() {
            rows[j].push((i, v));
        }
        Self::from_rows(self.ncols, self.nrows, rows)
    }

    /// Exact structural symmetry with bitwise-equal values.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Sparse-sparse product `self · rhs` (row-by-row accumulation).
    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != rhs.nrows {
            return Err(SagaError::shape(
                "csr matmul",
                format!("{:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let mut rows = Vec::with_capacity(self.nrows);
        for i in 0..self.nrows {
            acc.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&j, &b) in rc.iter().zip(rv) {
                    *acc.entry(j).or_insert(0.0) += a * b;
                }
            }
            rows.push(acc.drain().collect());
        }
        Ok(Self::from_rows(self.nrows, rhs.ncols, rows))
    }

    /// Returns a copy without the entries for which `drop(i, j)` holds.
    pub fn filter(&self, mut drop: impl FnMut(usize, usize) -> bool) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if !drop(i, j) {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Applies `f` to every stored value.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.values[p] = f(i, self.indices[p], self.values[p]);
            }
        }
        out
    }

    fn check_rhs(&self, rows: usize) {
        assert_eq!(
            self.ncols, rows,
            "sparse operator with {} columns applied to {} rows",
            self.ncols, rows
        );
    }
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        self.check_rhs(rhs.nrows());
        let mut out = Array2::zeros((self.nrows, rhs.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                out_row.scaled_add(a, &rhs.row(k));
            }
        }
        out
    }

    fn apply_transpose(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(self.nrows, rhs.nrows());
        let mut out = Array2::zeros((self.ncols, rhs.ncols()));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let src = rhs.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                out.row_mut(j).scaled_add(a, &src);
            }
        }
        out
    }
}

impl LinearOperator for Array2<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        self.dot(&rhs)
    }

    fn apply_transpose(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        self.t().dot(&rhs)
    }
}

/// Square N×N matrix stored sparse, or dense once its fill ratio makes the
/// sparse layout a loss.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjacencyMatrix {
    Sparse(CsrMatrix),
    Dense(Array2<f64>),
}

impl AdjacencyMatrix {
    pub fn dim(&self) -> usize {
        match self {
            AdjacencyMatrix::Sparse(m) => m.nrows,
            AdjacencyMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            AdjacencyMatrix::Sparse(m) => m.get(i, j),
            AdjacencyMatrix::Dense(m) => m[[i, j]],
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, AdjacencyMatrix::Dense(_))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            AdjacencyMatrix::Sparse(m) => m.to_dense(),
            AdjacencyMatrix::Dense(m) => m.clone(),
        }
    }

    /// Column indices of the nonzero entries of row `i`, ascending.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        match self {
            AdjacencyMatrix::Sparse(m) => {
                let (cols, vals) = m.row(i);
                cols.iter()
                    .zip(vals)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(&c, _)| c)
                    .collect()
            }
            AdjacencyMatrix::Dense(m) => m
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(c, _)| c)
                .collect(),
        }
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        match self {
            AdjacencyMatrix::Sparse(m) => m.values.iter().filter(|&&v| v != 0.0).count(),
            AdjacencyMatrix::Dense(m) => m.iter().filter(|&&v| v != 0.0).count(),
        }
    }

    /// Zeroes the entries for which `drop(i, j)` holds, returning the nonzero
    /// positions that were removed.
    pub fn zero_where(
        &self,
        mut drop: impl FnMut(usize, usize) -> bool,
    ) -> (AdjacencyMatrix, Vec<(usize, usize)>) {
        let mut removed = Vec::new();
        match self {
            AdjacencyMatrix::Sparse(m) => {
                let kept = m.filter(|i, j| {
                    let d = drop(i, j);
                    if d && m.get(i, j) != 0.0 {
                        removed.push((i, j));
                    }
                    d
                });
                (AdjacencyMatrix::Sparse(kept), removed)
            }
            AdjacencyMatrix::Dense(m) => {
                let mut out = m.clone();
                for ((i, j), v) in out.indexed_iter_mut() {
                    if *v != 0.0 && drop(i, j) {
                        removed.push((i, j));
                        *v = 0.0;
                    }
                }
                (AdjacencyMatrix::Dense(out), removed)
            }
        }
    }

    /// `lhs · self` for a sparse left factor, switching to dense storage when
    /// the product's fill ratio exceeds `dense_above`.
    pub fn left_mul(&self, lhs: &CsrMatrix, dense_above: f64) -> Result<AdjacencyMatrix> {
        match self {
            AdjacencyMatrix::Sparse(m) => {
                let prod = lhs.matmul(m)?;
                if prod.fill_ratio() > dense_above {
                    Ok(AdjacencyMatrix::Dense(prod.to_dense()))
                } else {
                    Ok(AdjacencyMatrix::Sparse(prod))
                }
            }
            AdjacencyMatrix::Dense(m) => {
                if lhs.ncols != m.nrows() {
                    return Err(SagaError::shape(
                        "adjacency product",
                        format!("{:?} x {:?}", lhs.shape(), m.dim()),
                    ));
                }
                Ok(AdjacencyMatrix::Dense(lhs.apply(m.view())))
            }
        }
    }

    pub fn is_symmetric_within(&self, tol: f64) -> bool {
        let n = self.dim();
        match self {
            AdjacencyMatrix::Sparse(m) => m.iter().all(|(i, j, v)| (m.get(j, i) - v).abs() <= tol),
            AdjacencyMatrix::Dense(m) => {
                (0..n).all(|i| (0..i).all(|j| (m[[i, j]] - m[[j, i]]).abs() <= tol))
            }
        }
    }
}

impl LinearOperator for AdjacencyMatrix {
    fn nrows(&self) -> usize {
        self.dim()
    }

    fn ncols(&self) -> usize {
        self.dim()
    }

    fn apply(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            AdjacencyMatrix::Sparse(m) => m.apply(rhs),
            AdjacencyMatrix::Dense(m) => m.apply(rhs),
        }
    }

    fn apply_transpose(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            AdjacencyMatrix::Sparse(m) => m.apply_transpose(rhs),
            AdjacencyMatrix::Dense(m) => m.apply_transpose(rhs),
        }
    }
}

/// Elementwise comparison helper shared by tests across the crate.
#[doc(hidden)]
pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut worst = 0.0f64;
    Zip::from(&a).and(&b).for_each(|x, y| worst = worst.max((x - y).abs()));
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.to_dense(), array![[0.0, 3.0], [4.0, 0.0]]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let a = array![[1.0, 0.0, 2.0], [0.0, 3.0, 0.0], [4.0, 0.0, 5.0]];
        let b = array![[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 6.0]];
        let sa = CsrMatrix::from_dense(a.view());
        let sb = CsrMatrix::from_dense(b.view());
        assert_eq!(sa.matmul(&sb).unwrap().to_dense(), a.dot(&b));
        let rhs = array![[1.0, -1.0], [0.5, 2.0], [3.0, 0.0]];
        assert_eq!(sa.apply(rhs.view()), a.dot(&rhs));
        assert_eq!(sa.apply_transpose(rhs.view()), a.t().dot(&rhs));
        assert_eq!(sa.transpose().to_dense(), a.t().to_owned());
    }

    #[test]
    fn dense_fallback_above_fill_ratio() {
        let a = CsrMatrix::from_dense(array![[1.0, 1.0], [1.0, 0.0]].view());
        let sparse = AdjacencyMatrix::Sparse(CsrMatrix::identity(2));
        assert!(sparse.left_mul(&a, 0.25).unwrap().is_dense());
        assert!(!sparse.left_mul(&a, 0.9).unwrap().is_dense());
    }
}
