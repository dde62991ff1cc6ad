//! Compressed-column sparse matrices with a shared, immutable pattern, and a
//! thin LU wrapper around `faer`'s sparse direct solver.
//!
//! Assembly adds element contributions into `values` through precomputed slot
//! indices, always in triangle order, so every entry is summed in the same
//! order no matter how the caller schedules work.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CscPattern {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    /// Sorted within each column.
    pub row_idx: Vec<usize>,
}

impl CscPattern {
    pub fn from_entries(nrows: usize, ncols: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); ncols];
        for (r, c) in entries {
            assert!(r < nrows && c < ncols, "entry ({r}, {c}) out of bounds");
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut rows in cols {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        Self { nrows, ncols, col_ptr, row_idx }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of entry `(r, c)` in the value array.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let (start, end) = (self.col_ptr[c], self.col_ptr[c + 1]);
        self.row_idx[start..end].binary_search(&r).ok().map(|k| start + k)
    }

    fn faer_symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.nrows, self.ncols, &self.col_ptr, None, &self.row_idx)
    }
}

#[derive(Clone, Debug)]
pub struct CscMatrix {
    pub pattern: Arc<CscPattern>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(pattern: Arc<CscPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Sums duplicates in the order given.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pattern = Arc::new(CscPattern::from_entries(nrows, ncols, triplets.iter().map(|&(r, c, _)| (r, c))));
        let mut m = Self::zeros(pattern);
        for &(r, c, v) in triplets {
            let s = m.pattern.slot(r, c).expect("entry in pattern");
            m.values[s] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.slot(r, c).map_or(0.0, |s| self.values[s])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![0.0; self.nrows()];
        for c in 0..self.ncols() {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for s in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                y[self.pattern.row_idx[s]] += self.values[s] * xc;
            }
        }
        y
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        (0..self.ncols())
            .map(|c| {
                (self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1])
                    .map(|s| self.values[s] * x[self.pattern.row_idx[s]])
                    .sum()
            })
            .collect()
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `Σ_k c_k A_k` over matrices sharing one pattern.
    pub fn linear_combination(terms: &[(f64, &CscMatrix)]) -> CscMatrix {
        let pattern = terms[0].1.pattern.clone();
        let mut values = vec![0.0; pattern.nnz()];
        for (c, m) in terms {
            assert!(Arc::ptr_eq(&m.pattern, &pattern) || *m.pattern == *pattern, "patterns differ");
            if *c == 0.0 {
                continue;
            }
            for (v, mv) in values.iter_mut().zip(&m.values) {
                *v += c * mv;
            }
        }
        CscMatrix { pattern, values }
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut triplets = Vec::with_capacity(self.values.len());
        for c in 0..self.ncols() {
            for s in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                triplets.push((c, self.pattern.row_idx[s], self.values[s]));
            }
        }
        CscMatrix::from_triplets(self.ncols(), self.nrows(), &triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols()]; self.nrows()];
        for c in 0..self.ncols() {
            for s in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                d[self.pattern.row_idx[s]][c] += self.values[s];
            }
        }
        d
    }

    /// `max |A_ij - s A_ji|` over stored entries; `s = 1` measures asymmetry,
    /// `s = -1` skew-asymmetry.
    pub fn max_transpose_defect(&self, s: f64) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.ncols() {
            for k in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                let r = self.pattern.row_idx[k];
                worst = worst.max((self.values[k] - s * self.get(c, r)).abs());
            }
        }
        worst
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.pattern.faer_symbolic(), &self.values)
    }
}

/// Sparse LU with partial pivoting (supernodal, COLAMD column order). The
/// symbolic analysis, numeric storage and workspace are reused when the
/// matrix is refactored with the same pattern.
pub struct SparseLu {
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    workspace: MemBuffer,
    pattern: Arc<CscPattern>,
}

impl SparseLu {
    pub fn new(a: &CscMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::LinearSolver(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
        }
        // the supernodal kernel is about three times faster than the
        // simplicial one on Taylor-Hood saddle matrices of every size we use
        let params = LuSymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let symbolic = factorize_symbolic_lu(a.pattern.faer_symbolic(), params)
            .map_err(|e| Error::LinearSolver(format!("symbolic analysis failed: {e:?}")))?;
        let scratch = symbolic
            .factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default())
            .or(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let workspace =
            MemBuffer::try_new(scratch).map_err(|_| Error::LinearSolver("out of memory for LU workspace".into()))?;
        let mut lu = Self { symbolic, numeric: NumericLu::new(), workspace, pattern: a.pattern.clone() };
        lu.factor_numeric(a)?;
        Ok(lu)
    }

    fn factor_numeric(&mut self, a: &CscMatrix) -> Result<()> {
        self.symbolic
            .factorize_numeric_lu(
                &mut self.numeric,
                a.as_faer(),
                Par::Seq,
                MemStack::new(&mut self.workspace),
                Default::default(),
            )
            .map_err(|e| Error::LinearSolver(format!("numeric factorization failed: {e:?}")))?;
        Ok(())
    }

    /// Numeric refactorization for a matrix with the same pattern.
    pub fn refactor(&mut self, a: &CscMatrix) -> Result<()> {
        if !(Arc::ptr_eq(&a.pattern, &self.pattern) || *a.pattern == *self.pattern) {
            *self = Self::new(a)?;
            return Ok(());
        }
        self.factor_numeric(a)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        let n = x.len();
        let mut workspace = MemBuffer::try_new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq))
            .map_err(|_| Error::LinearSolver("out of memory for LU workspace".into()))?;
        LuRef::new_unchecked(&self.symbolic, &self.numeric).solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, n, 1),
            Par::Seq,
            MemStack::new(&mut workspace),
        );
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("singular matrix: solve produced non-finite values".into()));
        }
        Ok(x)
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, seed: u64) -> CscMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + rng.random::<f64>()));
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                t.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
        CscMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.pattern.nnz(), 2);
    }

    #[test]
    fn products_match_dense() {
        let m = random_sparse(30, 1);
        let d = m.to_dense();
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let y = m.mul_vec(&x);
        let yt = m.transpose_mul_vec(&x);
        for i in 0..30 {
            let e: f64 = (0..30).map(|j| d[i][j] * x[j]).sum();
            let et: f64 = (0..30).map(|j| d[j][i] * x[j]).sum();
            assert!((y[i] - e).abs() < 1e-13);
            assert!((yt[i] - et).abs() < 1e-13);
        }
        let t = m.transpose();
        assert_eq!(t.mul_vec(&x), yt);
    }

    #[test]
    fn lu_solves_and_refactors() {
        let m = random_sparse(50, 2);
        let b: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 - 2.0).collect();
        let mut lu = SparseLu::new(&m).unwrap();
        let x = lu.solve(&b).unwrap();
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm(&r) < 1e-12);

        let mut m2 = m.clone();
        for v in &mut m2.values {
            *v *= 1.5;
        }
        lu.refactor(&m2).unwrap();
        let x2 = lu.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&x2) {
            assert!((a / 1.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = CscMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 1, 1.0)]);
        let outcome = SparseLu::new(&m).and_then(|lu| lu.solve(&[1.0, 1.0, 1.0]));
        assert!(outcome.is_err());
    }

    #[test]
    fn skew_defect() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, -2.0)]);
        assert_eq!(m.max_transpose_defect(-1.0), 0.0);
        assert_eq!(m.max_transpose_defect(1.0), 4.0);
    }
}
