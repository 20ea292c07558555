//! Factorization of the regularized system `P + σI + Aᵀ diag(ρ) A`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Systems up to this size are factored densely.
pub const DENSE_LIMIT: usize = 300;

/// Upper triangle of `P + σI + Aᵀ diag(ρ) A` in compressed column form, with
/// the sparsity pattern fixed so values can be refilled when `ρ` changes.
struct UpperPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl UpperPattern {
    fn build(p: &CsrMatrix, a_cols: &CsrMatrix, a: &CsrMatrix) -> Self {
        let n = p.nrows();
        let mut mark = vec![usize::MAX; n];
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        let mut rows: Vec<usize> = Vec::new();
        for j in 0..n {
            rows.clear();
            let mut add = |i: usize, rows: &mut Vec<usize>| {
                if i <= j && mark[i] != j {
                    mark[i] = j;
                    rows.push(i);
                }
            };
            add(j, &mut rows);
            for &i in p.row(j).0 {
                add(i, &mut rows);
            }
            for &k in a_cols.row(j).0 {
                for &i in a.row(k).0 {
                    add(i, &mut rows);
                }
            }
            rows.sort_unstable();
            row_idx.extend_from_slice(&rows);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    fn fill(&self, p: &CsrMatrix, a_cols: &CsrMatrix, a: &CsrMatrix, sigma: f64, rho: &[f64]) -> Vec<f64> {
        let mut values = vec![0.0; self.row_idx.len()];
        let mut pos = vec![0usize; self.n];
        for j in 0..self.n {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            for k in range.clone() {
                pos[self.row_idx[k]] = k;
            }
            values[pos[j]] += sigma;
            let (cols, vals) = p.row(j);
            for (&i, &v) in cols.iter().zip(vals) {
                if i <= j {
                    values[pos[i]] += v;
                }
            }
            let (krows, kvals) = a_cols.row(j);
            for (&k, &akj) in krows.iter().zip(kvals) {
                let (cols, vals) = a.row(k);
                for (&i, &aki) in cols.iter().zip(vals) {
                    if i <= j {
                        values[pos[i]] += rho[k] * aki * akj;
                    }
                }
            }
        }
        values
    }
}

enum Backend {
    Dense {
        /// Row-major lower Cholesky factor.
        l: Vec<f64>,
    },
    Sparse {
        pattern: UpperPattern,
        symbolic: SymbolicCholesky<usize>,
        l_values: Vec<f64>,
        stack: MemBuffer,
    },
}

/// Cached factorization reused across iterations; refactored only on `ρ` updates.
pub struct KktSolver {
    n: usize,
    sigma: f64,
    a_cols: CsrMatrix,
    backend: Backend,
}

impl KktSolver {
    pub fn new(p: &CsrMatrix, a: &CsrMatrix, sigma: f64, rho: &[f64]) -> Result<Self> {
        let n = p.nrows();
        let a_cols = a.transpose();
        let backend = if n <= DENSE_LIMIT {
            Backend::Dense {
                l: dense_factor(n, p, a, sigma, rho)?,
            }
        } else {
            let pattern = UpperPattern::build(p, &a_cols, a);
            let symbolic = analyze(&pattern)?;
            let values = pattern.fill(p, &a_cols, a, sigma, rho);
            let mut solver = Backend::Sparse {
                l_values: vec![0.0; symbolic.len_val()],
                stack: MemBuffer::new(
                    symbolic
                        .factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default())
                        .or(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq)),
                ),
                pattern,
                symbolic,
            };
            sparse_refactor(&mut solver, &values)?;
            solver
        };
        Ok(Self {
            n,
            sigma,
            a_cols,
            backend,
        })
    }

    pub fn refactor(&mut self, p: &CsrMatrix, a: &CsrMatrix, rho: &[f64]) -> Result<()> {
        match &mut self.backend {
            Backend::Dense { l } => *l = dense_factor(self.n, p, a, self.sigma, rho)?,
            Backend::Sparse { pattern, .. } => {
                let values = pattern.fill(p, &self.a_cols, a, self.sigma, rho);
                sparse_refactor(&mut self.backend, &values)?;
            }
        }
        Ok(())
    }

    /// Solves in place.
    pub fn solve(&mut self, rhs: &mut [f64]) {
        let n = self.n;
        match &mut self.backend {
            Backend::Dense { l } => {
                for i in 0..n {
                    let row = &l[i * n..i * n + i];
                    let s: f64 = row.iter().zip(&rhs[..i]).map(|(a, b)| a * b).sum();
                    rhs[i] = (rhs[i] - s) / l[i * n + i];
                }
                for i in (0..n).rev() {
                    let mut s = rhs[i];
                    for k in i + 1..n {
                        s -= l[k * n + i] * rhs[k];
                    }
                    rhs[i] = s / l[i * n + i];
                }
            }
            Backend::Sparse {
                symbolic,
                l_values,
                stack,
                ..
            } => {
                let llt = LltRef::new(symbolic, l_values);
                let m = MatMut::from_column_major_slice_mut(rhs, n, 1);
                llt.solve_in_place_with_conj(Conj::No, m, Par::Seq, MemStack::new(stack));
            }
        }
    }

    /// Number of stored entries in the triangular factor.
    pub fn factor_nnz(&self) -> usize {
        match &self.backend {
            Backend::Dense { .. } => self.n * (self.n + 1) / 2,
            Backend::Sparse { symbolic, .. } => symbolic.len_val(),
        }
    }
}

/// Factor size of the system for `(P, A)` from symbolic analysis alone, without
/// any numeric work. Used to compare memory between formulations.
pub fn factor_nnz_estimate(p: &CsrMatrix, a: &CsrMatrix) -> Result<usize> {
    let n = p.nrows();
    if n <= DENSE_LIMIT {
        return Ok(n * (n + 1) / 2);
    }
    let pattern = UpperPattern::build(p, &a.transpose(), a);
    Ok(analyze(&pattern)?.len_val())
}

fn analyze(pattern: &UpperPattern) -> Result<SymbolicCholesky<usize>> {
    let sym = SymbolicSparseColMatRef::new_checked(pattern.n, pattern.n, &pattern.col_ptr, None, &pattern.row_idx);
    factorize_symbolic_cholesky(sym, Side::Upper, SymmetricOrdering::Amd, Default::default())
        .map_err(|e| Error::Solver(format!("symbolic factorization failed: {e:?}")))
}

fn sparse_refactor(backend: &mut Backend, values: &[f64]) -> Result<()> {
    let Backend::Sparse {
        pattern,
        symbolic,
        l_values,
        stack,
    } = backend
    else {
        unreachable!()
    };
    let sym = SymbolicSparseColMatRef::new_checked(pattern.n, pattern.n, &pattern.col_ptr, None, &pattern.row_idx);
    let mat = SparseColMatRef::new(sym, values);
    symbolic
        .factorize_numeric_llt(
            l_values,
            mat,
            Side::Upper,
            Default::default(),
            Par::Seq,
            MemStack::new(stack),
            Default::default(),
        )
        .map_err(|e| Error::Solver(format!("system is not positive definite: {e:?}")))?;
    Ok(())
}

fn dense_factor(n: usize, p: &CsrMatrix, a: &CsrMatrix, sigma: f64, rho: &[f64]) -> Result<Vec<f64>> {
    let mut k = vec![0.0; n * n];
    for (i, j, v) in p.triplets() {
        k[i * n + j] += v;
    }
    for i in 0..n {
        k[i * n + i] += sigma;
    }
    for r in 0..a.nrows() {
        let (cols, vals) = a.row(r);
        for (&i, &ai) in cols.iter().zip(vals) {
            for (&j, &aj) in cols.iter().zip(vals) {
                k[i * n + j] += rho[r] * ai * aj;
            }
        }
    }
    // In-place lower Cholesky, row-major.
    for j in 0..n {
        let mut d = k[j * n + j];
        for m in 0..j {
            d -= k[j * n + m] * k[j * n + m];
        }
        if !(d > 0.0) {
            return Err(Error::Solver(format!("system is not positive definite (pivot {j})")));
        }
        let d = d.sqrt();
        k[j * n + j] = d;
        for i in j + 1..n {
            let mut s = k[i * n + j];
            for m in 0..j {
                s -= k[i * n + m] * k[j * n + m];
            }
            k[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            k[i * n + j] = 0.0;
        }
    }
    Ok(k)
}
