//! Compressed sparse row matrices and an LSQR least-squares solver.
//!
//! Matrix-vector products parallelize over rows (each output entry is a
//! sequential dot product), so results are bitwise reproducible regardless of
//! thread count. All scalar reductions in LSQR are sequential for the same
//! reason.

use rayon::prelude::*;

use crate::{Error, Result};

/// CSR matrix. Within each row, column indices are strictly increasing.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row CSR assembly.
pub struct CsrBuilder {
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrBuilder {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, row_ptr: vec![0], col_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn with_capacity(ncols: usize, nnz: usize) -> Self {
        let mut b = Self::new(ncols);
        b.col_idx.reserve(nnz);
        b.vals.reserve(nnz);
        b
    }

    /// Append one row; `entries` must be sorted by column with no duplicates.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|e| e.0 < self.ncols));
        for &(c, v) in entries {
            if v != 0.0 {
                self.col_idx.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn finish(self) -> CsrMatrix {
        CsrMatrix {
            nrows: self.row_ptr.len() - 1,
            ncols: self.ncols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            vals: self.vals,
        }
    }
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *out = acc;
        });
    }

    /// CSR of the transpose (counting sort over columns).
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0f64; self.nnz()];
        let mut cursor = counts;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                let dst = cursor[c];
                col_idx[dst] = i;
                vals[dst] = self.vals[k];
                cursor[c] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, vals }
    }

    /// Euclidean norms of the columns.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0f64; self.ncols];
        for (&c, &v) in self.col_idx.iter().zip(&self.vals) {
            sq[c] += v * v;
        }
        sq.iter_mut().for_each(|v| *v = v.sqrt());
        sq
    }

    /// Dense row-major copy (for small problems and tests).
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0f64; self.nrows * self.ncols];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i * self.ncols + self.col_idx[k]] = self.vals[k];
            }
        }
        d
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outcome of an LSQR run.
#[derive(Debug, Clone)]
pub struct LsqrResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Exact ‖Aᵀ(b − Ax)‖ recomputed after the iteration finished.
    pub normal_residual: f64,
    /// ‖Aᵀb‖, the reference scale for the stopping test.
    pub normal_rhs: f64,
    pub converged: bool,
}

/// Golub-Kahan bidiagonalization least-squares solve of min ‖Ax − b‖.
///
/// `at` must be the transpose of `a` (the caller usually keeps it around for
/// other purposes, so it is taken as an argument rather than rebuilt).
/// Columns are rescaled to unit norm internally, which keeps the iteration
/// count independent of how unknowns were physically scaled. Stops when the
/// estimated ‖Aᵀr‖ drops below `tol`·‖Aᵀb‖ and verifies the exact value
/// before reporting convergence.
pub fn lsqr(a: &CsrMatrix, at: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> Result<LsqrResult> {
    assert_eq!(at.nrows, a.ncols);
    assert_eq!(at.ncols, a.nrows);
    if !(tol > 0.0) {
        return Err(Error::Config(format!("least-squares tolerance must be positive, got {tol}")));
    }
    let m = a.nrows;
    let n = a.ncols;
    let mut scale = a.column_norms();
    // Zero columns cannot influence the residual; give them unit scale.
    scale.iter_mut().for_each(|s| {
        if *s == 0.0 {
            *s = 1.0;
        }
    });
    let inv_scale: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();

    // Scaled operators: Ā = A·D, Āᵀ = D·Aᵀ with D = diag(inv_scale).
    let mut tmp_n = vec![0.0f64; n];
    let apply = |v: &[f64], out: &mut [f64], tmp: &mut [f64]| {
        tmp.iter_mut().zip(v.iter().zip(&inv_scale)).for_each(|(t, (x, d))| *t = x * d);
        a.matvec(tmp, out);
    };
    let apply_t = |u: &[f64], out: &mut [f64]| {
        at.matvec(u, out);
        out.iter_mut().zip(&inv_scale).for_each(|(x, d)| *x *= d);
    };

    let mut u = b.to_vec();
    let beta0 = norm(&u);
    let mut v = vec![0.0f64; n];
    let mut x_scaled = vec![0.0f64; n];
    if beta0 == 0.0 {
        return Ok(LsqrResult {
            x: x_scaled,
            iterations: 0,
            normal_residual: 0.0,
            normal_rhs: 0.0,
            converged: true,
        });
    }
    u.iter_mut().for_each(|z| *z /= beta0);
    apply_t(&u, &mut v);
    let alpha0 = norm(&v);
    let normal_rhs_scaled = beta0 * alpha0;
    if alpha0 == 0.0 {
        // b is orthogonal to the range of A; x = 0 is optimal.
        return Ok(LsqrResult {
            x: x_scaled,
            iterations: 0,
            normal_residual: 0.0,
            normal_rhs: 0.0,
            converged: true,
        });
    }
    v.iter_mut().for_each(|z| *z /= alpha0);

    let mut w = v.clone();
    let mut alpha = alpha0;
    let mut phibar = beta0;
    let mut rhobar = alpha;
    let mut iterations = 0;
    let mut converged = false;
    let mut au = vec![0.0f64; m];

    for it in 1..=max_iters {
        // u = Ā v − α u
        apply(&v, &mut au, &mut tmp_n);
        u.iter_mut().zip(&au).for_each(|(ui, ai)| *ui = ai - alpha * *ui);
        let beta = norm(&u);
        if beta > 0.0 {
            u.iter_mut().for_each(|z| *z /= beta);
        }
        // v = Āᵀ u − β v
        apply_t(&u, &mut tmp_n);
        v.iter_mut().zip(&tmp_n).for_each(|(vi, ti)| *vi = ti - beta * *vi);
        alpha = norm(&v);
        if alpha > 0.0 {
            v.iter_mut().for_each(|z| *z /= alpha);
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        x_scaled.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += t1 * wi);
        w.iter_mut().zip(&v).for_each(|(wi, vi)| *wi = vi + t2 * *wi);

        iterations = it;
        // ‖Āᵀ r‖ for the current iterate, from the recurrence.
        let normal_est = phibar * alpha * c.abs();
        if normal_est <= tol * normal_rhs_scaled {
            converged = true;
            break;
        }
    }

    // Unscale and recompute the exact normal residual for honest reporting.
    let x: Vec<f64> = x_scaled.iter().zip(&inv_scale).map(|(xi, d)| xi * d).collect();
    let mut r = vec![0.0f64; m];
    a.matvec(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut atr = vec![0.0f64; n];
    at.matvec(&r, &mut atr);
    let mut atb = vec![0.0f64; n];
    at.matvec(b, &mut atb);
    let normal_residual = norm(&atr);
    let normal_rhs = norm(&atb);
    // The recurrence estimate can drift from the true residual; trust only
    // the recomputed value (with slack for the unscaled reference frame).
    let converged = converged && normal_residual <= 10.0 * tol * normal_rhs.max(f64::MIN_POSITIVE);
    Ok(LsqrResult { x, iterations, normal_residual, normal_rhs, converged })
}
