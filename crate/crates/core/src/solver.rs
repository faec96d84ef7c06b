//! Sparse linear algebra for the implicit step.
//!
//! The assembled operator couples the new phase field with the midpoint
//! chemical potential in a 2N x 2N block system whose (2,2) block is the
//! identity. Two solution paths are provided behind one residual-based
//! contract (`|A x - b| <= max(abs_tol, rel_tol |b|)`):
//!
//! - `Direct`: sparse LU of the full operator, refreshed every solve, plus
//!   iterative refinement.
//! - `Krylov`: preconditioned residual correction on the full system. The
//!   preconditioner is a cached LU factorization that is refreshed only when
//!   convergence degrades; between refreshes a step costs a couple of
//!   triangular solves, which is what makes the long runs cheap. Only the
//!   potential-row diagonal drifts between steps, so a frozen factorization
//!   stays an excellent preconditioner for a long time. (Forming the Schur
//!   complement explicitly is not an option here: with a sub-grid interface
//!   width the `chi^2 psi` products reach 1e12 and the eliminated operator
//!   leaves double precision.)
//!
//! Factorizations run sequentially (faer parallelism is pinned to `Seq`), so
//! identical inputs give bitwise identical outputs.

use crate::error::{Error, Result};
use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use std::sync::Once;
use std::time::Instant;

/// Compressed sparse row matrix with a fixed pattern and mutable values.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from per-row (col, val) lists; columns are sorted per row and
    /// duplicates are rejected by debug assertion.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut vals = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                vals.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    /// Entry lookup by binary search; zero if not in the pattern.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y.iter()
            .zip(b)
            .map(|(ax, bi)| (bi - ax) * (bi - ax))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// Sparse LU of the full system each solve.
    Direct,
    /// Schur-reduced BiCGSTAB with a cached LU preconditioner.
    Krylov,
}

/// Residual-based solver contract; method choice does not change semantics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iterations: usize,
    pub method: SolverMethod,
    /// Krylov only: refresh the cached factorization when a solve needs more
    /// iterations than this.
    pub refresh_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_iterations: 400,
            method: SolverMethod::Direct,
            refresh_threshold: 6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Param(format!(
                "rel_tol must be > 0 (got {})",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// Outcome of one linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub wall_seconds: f64,
    pub factor_refreshed: bool,
}

static FAER_SEQ: Once = Once::new();

fn pin_sequential() {
    FAER_SEQ.call_once(|| {
        faer::set_global_parallelism(Par::Seq);
    });
}

/// Cached CSC mirror of a fixed-pattern CSR matrix plus its LU machinery.
struct FactorCache {
    /// csc_vals[perm[k]] = csr_vals[k]
    perm: Vec<usize>,
    mat: SparseColMat<usize, f64>,
    symbolic_lu: SymbolicLu<usize>,
    lu: Option<Lu<usize, f64>>,
}

impl FactorCache {
    fn new(a: &Csr) -> Result<Self> {
        pin_sequential();
        let n = a.nrows;
        // transpose pass: counts per column
        let mut col_counts = vec![0usize; a.ncols];
        for &c in &a.indices {
            col_counts[c] += 1;
        }
        let mut col_ptr = vec![0usize; a.ncols + 1];
        for c in 0..a.ncols {
            col_ptr[c + 1] = col_ptr[c] + col_counts[c];
        }
        let mut cursor = col_ptr.clone();
        let mut row_idx = vec![0usize; a.nnz()];
        let mut perm = vec![0usize; a.nnz()];
        for r in 0..n {
            for k in a.indptr[r]..a.indptr[r + 1] {
                let c = a.indices[k];
                let pos = cursor[c];
                cursor[c] += 1;
                row_idx[pos] = r;
                perm[k] = pos;
            }
        }
        let symbolic = SymbolicSparseColMat::new_checked(a.nrows, a.ncols, col_ptr, None, row_idx);
        let symbolic_lu = SymbolicLu::try_new(symbolic.rb()).map_err(|e| Error::Solve {
            message: format!("symbolic factorization failed: {e:?}"),
            residual: f64::NAN,
            iterations: 0,
        })?;
        let mat = SparseColMat::new(symbolic, vec![0.0; a.nnz()]);
        Ok(Self {
            perm,
            mat,
            symbolic_lu,
            lu: None,
        })
    }

    fn refresh(&mut self, a: &Csr) -> Result<()> {
        let vals = self.mat.val_mut();
        for (k, &p) in self.perm.iter().enumerate() {
            vals[p] = a.vals[k];
        }
        let lu =
            Lu::try_new_with_symbolic(self.symbolic_lu.clone(), self.mat.rb()).map_err(|e| {
                Error::Solve {
                    message: format!("numeric factorization failed: {e:?}"),
                    residual: f64::NAN,
                    iterations: 0,
                }
            })?;
        self.lu = Some(lu);
        Ok(())
    }

    fn apply_inv(&self, rhs: &[f64], out: &mut [f64]) {
        let lu = self.lu.as_ref().expect("factorization missing");
        let mut m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        lu.solve_in_place(m.as_mut());
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[(i, 0)];
        }
    }
}

/// Stateful solver bound to one fixed sparsity pattern.
pub struct LinearSolver {
    pub options: SolverOptions,
    cache: Option<FactorCache>,
    /// iterations used by the previous solve, drives the refresh policy
    last_iters: usize,
}

impl LinearSolver {
    pub fn new(options: SolverOptions) -> Result<Self> {
        options.validate()?;
        pin_sequential();
        Ok(Self {
            options,
            cache: None,
            last_iters: usize::MAX,
        })
    }

    /// Solve the coupled block system; `n_half` is the cell count N of the
    /// 2N-row operator (kept for layout checking). Warm starts come from the
    /// previous time level.
    pub fn solve_coupled(
        &mut self,
        a: &Csr,
        b: &[f64],
        n_half: usize,
        warm: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveStats)> {
        debug_assert_eq!(a.nrows, 2 * n_half);
        let t0 = Instant::now();
        let b_norm = norm(b);
        let tol = self.options.abs_tol.max(self.options.rel_tol * b_norm);

        if self.cache.as_ref().is_none_or(|c| c.mat.nrows() != a.nrows) {
            self.cache = Some(FactorCache::new(a)?);
            self.last_iters = usize::MAX;
        }
        let stale = self.last_iters > self.options.refresh_threshold;
        let mut refreshed = false;
        let cache = self.cache.as_mut().unwrap();
        if matches!(self.options.method, SolverMethod::Direct) || stale || cache.lu.is_none() {
            cache.refresh(a)?;
            refreshed = true;
        }

        let mut x = vec![0.0; a.ncols];
        if let Some(w) = warm {
            if matches!(self.options.method, SolverMethod::Krylov) {
                x.copy_from_slice(w);
            }
        }

        // Residual correction against the cached factorization. With a fresh
        // factorization this is plain iterative refinement; with a frozen one
        // it converges geometrically while the operator drift stays small,
        // and a refresh is forced when it stops making progress.
        let mut r = vec![0.0; a.nrows];
        let mut dx = vec![0.0; a.ncols];
        let mut iterations = 0;
        let mut residual;
        let mut prev_residual = f64::INFINITY;
        loop {
            a.matvec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            residual = norm(&r);
            if residual <= tol || !residual.is_finite() {
                break;
            }
            if iterations >= self.options.max_iterations {
                break;
            }
            // Slow contraction means the cached factorization has drifted
            // too far from the operator; rebuild it once.
            if !refreshed && iterations >= 1 && residual > 0.25 * prev_residual {
                cache.refresh(a)?;
                refreshed = true;
            }
            prev_residual = residual;
            cache.apply_inv(&r, &mut dx);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            iterations += 1;
        }
        self.last_iters = iterations;

        if !residual.is_finite() || residual > tol {
            return Err(Error::Solve {
                message: "residual target not reached".into(),
                residual,
                iterations,
            });
        }
        Ok((
            x,
            SolveStats {
                iterations,
                residual,
                wall_seconds: t0.elapsed().as_secs_f64(),
                factor_refreshed: refreshed,
            },
        ))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
