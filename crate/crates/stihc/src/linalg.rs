//! Thin wrappers around the dense linear-algebra backend.
//!
//! All kernels run sequentially so results are bitwise reproducible
//! regardless of the worker-pool size; parallelism comes from distributing
//! independent genes and grid values across threads instead.

use std::sync::Once;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

static INIT: Once = Once::new();

pub(crate) fn init_backend() {
    INIT.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub(crate) struct SymSolver {
    chol: Llt<f64>,
}

impl SymSolver {
    pub fn new(a: &Mat<f64>) -> Option<SymSolver> {
        init_backend();
        Llt::new(a.as_ref(), Side::Lower).ok().map(|chol| SymSolver { chol })
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.chol.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }
}

/// Eigendecomposition of a symmetric matrix: (eigenvalues, eigenvectors)
/// with eigenvectors in columns.
pub(crate) fn sym_eigen(a: &Mat<f64>) -> Option<(Vec<f64>, Mat<f64>)> {
    init_backend();
    let evd = a.self_adjoint_eigen(Side::Lower).ok()?;
    let n = a.nrows();
    let s = evd.S();
    let vals = (0..n).map(|i| s[i]).collect();
    Some((vals, evd.U().to_owned()))
}

pub(crate) fn mat_col(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}
