//! Compressed sparse row matrices and a direct LU solve.
//!
//! The factorization is delegated to faer. A CSR matrix is handed over as the
//! CSC storage of its transpose and solved with `solve_transpose`, so no copy
//! of the pattern is made.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch: matrix is {rows}x{cols}, right-hand side has {rhs} entries")]
    DimensionMismatch { rows: usize, cols: usize, rhs: usize },
    #[error("matrix is singular or numerically ill-conditioned ({0})")]
    Singular(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix with the given column sets per row; all values zero.
    pub fn from_pattern(rows: &[Vec<usize>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            let mut cols = r.clone();
            cols.sort_unstable();
            cols.dedup();
            assert!(cols.last().is_none_or(|&c| c < n), "column index out of range");
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let pattern: Vec<Vec<usize>> =
            a.iter().map(|row| (0..row.len()).filter(|&j| row[j] != 0.0).collect()).collect();
        let mut m = Self::from_pattern(&pattern);
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let pattern: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut m = Self::from_pattern(&pattern);
        m.values.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds into an existing pattern entry. Panics if `(i, j)` is not stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.position(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[p] += v;
    }

    /// Adds into a storage slot obtained from [`CsrMatrix::slot`].
    pub fn add_at(&mut self, slot: usize, v: f64) {
        self.values[slot] += v;
    }

    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.position(i, j)
    }

    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale_row(&mut self, i: usize, s: f64) {
        self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter_mut().for_each(|v| *v *= s);
    }

    /// Replaces row `i` by the corresponding identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            self.values[p] = if self.col_idx[p] == i { 1.0 } else { 0.0 };
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[i][j] = v;
            }
        }
        a
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Direct solver that keeps the symbolic factorization between calls with
/// the same sparsity pattern.
#[derive(Default)]
pub struct DirectSolver {
    symbolic: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl DirectSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let n = a.dim();
        if b.len() != n {
            return Err(SolveError::DimensionMismatch { rows: n, cols: n, rhs: b.len() });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        // Row then column max-norm equilibration.
        let mut rs = vec![0.0f64; n];
        for i in 0..n {
            let m = a.row(i).1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m == 0.0 || !m.is_finite() {
                return Err(SolveError::Singular(format!("row {i} is empty or non-finite")));
            }
            rs[i] = 1.0 / m;
        }
        let mut cs = vec![0.0f64; n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, v) in cols.iter().zip(vals) {
                cs[j] = cs[j].max((v * rs[i]).abs());
            }
        }
        if let Some(j) = cs.iter().position(|&c| c == 0.0) {
            return Err(SolveError::Singular(format!("column {j} is empty")));
        }
        cs.iter_mut().for_each(|c| *c = 1.0 / *c);
        let mut scaled = Vec::with_capacity(a.nnz());
        for i in 0..n {
            let (cols, vals) = a.row(i);
            scaled.extend(cols.iter().zip(vals).map(|(&j, v)| v * rs[i] * cs[j]));
        }

        let reuse = matches!(&self.symbolic, Some((rp, ci, _)) if rp == a.row_ptr() && ci == a.col_idx());
        if !reuse {
            let sym = SymbolicSparseColMatRef::new_checked(n, n, a.row_ptr(), None, a.col_idx());
            let s = SymbolicLu::try_new(sym).map_err(|e| SolveError::Singular(format!("{e:?}")))?;
            self.symbolic = Some((a.row_ptr().to_vec(), a.col_idx().to_vec(), s));
        }
        let (_, _, symbolic) = self.symbolic.as_ref().expect("symbolic factorization present");
        let sym = SymbolicSparseColMatRef::new_checked(n, n, a.row_ptr(), None, a.col_idx());
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), SparseColMatRef::new(sym, &scaled))
            .map_err(|e| SolveError::Singular(format!("{e:?}")))?;

        let solve_scaled = |rhs: &[f64]| -> Vec<f64> {
            let mut m = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i] * rs[i]);
            lu.solve_transpose_in_place(m.as_mut());
            (0..n).map(|i| m[(i, 0)] * cs[i]).collect()
        };
        let mut x = solve_scaled(b);
        let bnorm = norm(b).max(f64::MIN_POSITIVE);
        let mut r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ax)| bi - ax).collect();
        let mut rel = norm(&r) / bnorm;
        for _ in 0..2 {
            if rel < 1e-14 || !rel.is_finite() {
                break;
            }
            let dx = solve_scaled(&r);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let rt: Vec<f64> = b.iter().zip(a.mul_vec(&trial)).map(|(bi, ax)| bi - ax).collect();
            let relt = norm(&rt) / bnorm;
            if relt < rel {
                x = trial;
                r = rt;
                rel = relt;
            } else {
                break;
            }
        }
        if !rel.is_finite() || rel > 1e-10 {
            return Err(SolveError::Singular(format!("relative residual {rel:e} after refinement")));
        }
        Ok(x)
    }
}

/// One-shot direct solve of `A x = b`.
pub fn sparse_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolveError> {
    DirectSolver::new().solve(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.5, -2.0, 3.25];
        assert_eq!(sparse_solve(&CsrMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn permutation_needs_pivoting() {
        let a = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let x = sparse_solve(&a, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_diagonally_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100;
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j && rng.random_bool(0.1) {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            row[i] = row.iter().map(|v: &f64| v.abs()).sum::<f64>() + 1.0;
        }
        let m = CsrMatrix::from_dense(&a);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = sparse_solve(&m, &b).unwrap();
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm(&r) / norm(&b) < 1e-12);
    }

    #[test]
    fn saddle_point_system() {
        // [[2, 1], [1, 0]] is indefinite.
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        let x = sparse_solve(&a, &[1.0, 2.0, 3.0]).unwrap();
        let r = a.mul_vec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn errors_are_distinct() {
        let a = CsrMatrix::identity(2);
        assert!(matches!(sparse_solve(&a, &[1.0]), Err(SolveError::DimensionMismatch { .. })));
        let s = CsrMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(sparse_solve(&s, &[1.0, 2.0]), Err(SolveError::Singular(_))));
        let empty_row = CsrMatrix::from_pattern(&[vec![0], vec![0]]);
        assert!(matches!(sparse_solve(&empty_row, &[1.0, 2.0]), Err(SolveError::Singular(_))));
    }

    #[test]
    fn symbolic_reuse_across_values() {
        let mut solver = DirectSolver::new();
        let mut a = CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x1 = solver.solve(&a, &[1.0, 2.0]).unwrap();
        a.set_identity_row(1);
        let x2 = solver.solve(&a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x1[0] + x1[1] - 1.0).abs() < 1e-14);
        assert!((x2[1] - 2.0).abs() < 1e-15 && (4.0 * x2[0] + 2.0 - 1.0).abs() < 1e-14);
    }
}
