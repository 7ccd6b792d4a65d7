//! Compressed-row sparse matrices and Jacobi-preconditioned conjugate
//! gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::space::SparseSystem;

/// Rows shorter than this are multiplied serially.
const PAR_MIN_ROWS: usize = 4096;

/// Square matrix in compressed sparse row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets; duplicates
    /// are summed in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps the summation order of duplicates deterministic
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(a: &nalgebra::DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            s += self.values[k] * x[self.col_idx[k]];
        }
        s
    }

    /// `y = A x`; rows are computed independently, so the result does not
    /// depend on the thread count.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        if self.n >= PAR_MIN_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for (c, v) in self.row(old_r) {
                if map[c] != usize::MAX {
                    t.push((new_r, map[c], v));
                }
            }
        }
        Self::from_triplets(keep.len(), t)
    }

    /// `P A P^T` where row `i` of the result is row `perm[i]` of `A`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        self.submatrix(perm)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest `|a_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let max = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / max
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

pub const DEFAULT_TOL: f64 = 1e-12;

pub fn default_max_iter(n: usize) -> usize {
    (10 * n).max(1000)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves the constrained system `system` by Jacobi-preconditioned CG.
pub fn cg_solve(system: &SparseSystem, tol: f64, max_iter: usize) -> (Vec<f64>, SolveReport) {
    cg_solve_matrix(&system.matrix, &system.rhs, tol, max_iter, |_, _| {})
}

/// Preconditioned CG on `a x = b`. `monitor(k, x_k)` is called with every
/// iterate, starting from `x_0 = 0`.
///
/// Stops once the recurrence residual meets `tol`, then checks the true
/// residual `b - A x` and restarts from `x` if it has drifted above `tol`.
/// Returns the iterate with the smallest true residual seen at a check.
pub fn cg_solve_matrix(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mut monitor: impl FnMut(usize, &[f64]),
) -> (Vec<f64>, SolveReport) {
    let n = a.n();
    assert_eq!(b.len(), n);
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    monitor(0, &x);
    if b_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut best = (x.clone(), 1.0);
    let mut restarts = 0;
    loop {
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter && norm(&r) > tol * b_norm {
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            monitor(iterations, &x);
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        // true residual
        a.matvec_into(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        let rel = norm(&r) / b_norm;
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= tol || iterations >= max_iter || restarts >= 3 {
            break;
        }
        restarts += 1;
    }
    let (x, rel) = best;
    (
        x,
        SolveReport {
            iterations,
            relative_residual: rel,
            converged: rel <= tol,
        },
    )
}
