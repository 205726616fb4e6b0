//! Carleman-weighted linearized least squares for one Newton step.
//!
//! Given the current state U, the next increment φ minimizes
//!
//!   J(φ) = ‖√w·h·(Δφ − Sφ + DF(U)φ + 𝓛(U))‖² + ε‖U + φ‖²_{H²}
//!
//! over increments vanishing on the two outermost node layers (the discrete
//! version of zero Cauchy data). w is the Carleman weight e^(2λ(r/b)^β) with
//! r the distance to an exterior point x0; it grows away from x0 and tilts
//! the fit toward the part of the domain where the data constrains the
//! solution least.

use crate::forward::Nonlinearity;
use crate::grid::{BoundaryIndex, Field, Grid2D};
use crate::sparse::{lsqr, CsrBuilder, CsrMatrix};
use crate::spectral::{
    linearize_nonlinearity, spectral_residual, BoundaryModeData, SpectralState,
};
use crate::time_basis::{StiffnessMatrix, TimeBasis};
use crate::{Error, Result};

/// Parameters of the Carleman weight e^(2λ(|x−x0|/b)^β).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParams {
    pub x0: (f64, f64),
    pub b: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl CarlemanParams {
    /// The parameter set used for the shipped test problems.
    pub fn defaults() -> Self {
        Self { x0: (0.0, 1.5), b: 5.0, lambda: 40.0, beta: 10.0 }
    }

    /// Largest distance from x0 to the closed square the grid covers.
    fn max_radius(&self, grid: &Grid2D) -> f64 {
        let hw = grid.half_width();
        let mut r: f64 = 0.0;
        for cx in [-hw, hw] {
            for cy in [-hw, hw] {
                r = r.max(((cx - self.x0.0).powi(2) + (cy - self.x0.1).powi(2)).sqrt());
            }
        }
        r
    }

    /// x0 must lie outside the closed square, b beyond its farthest corner,
    /// λ ≥ 0 (zero disables the weighting), β positive.
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        let hw = grid.half_width();
        if self.x0.0.abs() <= hw && self.x0.1.abs() <= hw {
            return Err(Error::Config(format!(
                "weight center ({}, {}) must lie outside the closed inversion square of half-width {hw}",
                self.x0.0, self.x0.1
            )));
        }
        if !(self.b > self.max_radius(grid)) {
            return Err(Error::Config(format!(
                "weight scale b = {} must exceed the farthest corner distance {:.6}",
                self.b,
                self.max_radius(grid)
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("weight strength must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("weight exponent must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn weight_at(&self, x: f64, y: f64) -> f64 {
        let r = ((x - self.x0.0).powi(2) + (y - self.x0.1).powi(2)).sqrt();
        (2.0 * self.lambda * (r / self.b).powf(self.beta)).exp()
    }
}

/// Samples the weight over the grid (validating the parameters first).
pub fn weight_field(grid: &Grid2D, params: &CarlemanParams) -> Result<Field> {
    params.validate(grid)?;
    let f = Field::from_fn(grid, |x, y| params.weight_at(x, y));
    if !f.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("Carleman weight overflowed".into()));
    }
    Ok(f)
}

/// Maps free grid nodes (everything except the two outermost layers) times
/// modes to solver columns. Column = free_slot·N + mode, free slots in
/// row-major node order.
#[derive(Debug, Clone)]
pub struct UnknownLayout {
    pub grid_n: usize,
    pub n_modes: usize,
    pub free: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
}

impl UnknownLayout {
    pub fn new(grid_n: usize, n_modes: usize) -> Result<Self> {
        if grid_n < 5 {
            return Err(Error::Config(format!(
                "inversion grid needs at least 5 nodes per axis, got {grid_n}"
            )));
        }
        let mut free = Vec::new();
        let mut index = vec![None; grid_n * grid_n];
        for i in 2..grid_n - 2 {
            for j in 2..grid_n - 2 {
                index[i * grid_n + j] = Some(free.len());
                free.push((i, j));
            }
        }
        Ok(Self { grid_n, n_modes, free, index })
    }

    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.index[i * self.grid_n + j]
    }

    pub fn col(&self, slot: usize, mode: usize) -> usize {
        slot * self.n_modes + mode
    }

    pub fn n_unknowns(&self) -> usize {
        self.free.len() * self.n_modes
    }

    pub fn pack(&self, state: &SpectralState) -> Vec<f64> {
        let mut x = vec![0.0; self.n_unknowns()];
        for (slot, &(i, j)) in self.free.iter().enumerate() {
            for m in 0..self.n_modes {
                x[self.col(slot, m)] = state.comps[m].at(i, j);
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> SpectralState {
        assert_eq!(x.len(), self.n_unknowns());
        let mut state = SpectralState::zeros(self.n_modes, self.grid_n);
        for (slot, &(i, j)) in self.free.iter().enumerate() {
            for m in 0..self.n_modes {
                state.comps[m].set(i, j, x[self.col(slot, m)]);
            }
        }
        state
    }
}

/// Extends projected Cauchy data into the two constrained node layers.
///
/// The outermost layer carries g0 at each boundary node. Each node of the
/// next layer takes g0 − h·g1 (the two-point normal-derivative relation)
/// from the boundary node straight outward from it; its four corners, which
/// sit inward of two boundary nodes at once, take the bottom/top one,
/// matching how the boundary index assigns corners to those rows.
pub fn boundary_lift(
    modes: &BoundaryModeData,
    boundary: &BoundaryIndex,
    grid: &Grid2D,
    n_modes: usize,
) -> SpectralState {
    let n = grid.n;
    let h = grid.h;
    let mut state = SpectralState::zeros(n_modes, n);
    let mut node_of = vec![usize::MAX; n * n];
    for (k, node) in boundary.nodes.iter().enumerate() {
        node_of[node.i * n + node.j] = k;
        for m in 0..n_modes {
            state.comps[m].set(node.i, node.j, modes.g0[k][m]);
        }
    }
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            if i != 1 && i != n - 2 && j != 1 && j != n - 2 {
                continue;
            }
            let source = if j == 1 {
                (i, 0)
            } else if j == n - 2 {
                (i, n - 1)
            } else if i == 1 {
                (0, j)
            } else {
                (n - 1, j)
            };
            let k = node_of[source.0 * n + source.1];
            debug_assert_ne!(k, usize::MAX);
            for m in 0..n_modes {
                state.comps[m].set(i, j, modes.g0[k][m] - h * modes.g1[k][m]);
            }
        }
    }
    state
}

/// Assembled least-squares problem for one increment.
pub struct LinearStepProblem {
    pub a: CsrMatrix,
    pub rhs: Vec<f64>,
    pub layout: UnknownLayout,
    /// Cost at zero increment, ‖rhs‖².
    pub j0: f64,
}

/// Builds the weighted linearized system around `prev` (which must carry the
/// boundary lift in its two outer layers).
pub fn assemble_step(
    prev: &SpectralState,
    grid: &Grid2D,
    basis: &TimeBasis,
    stiff: &StiffnessMatrix,
    nonlin: &Nonlinearity,
    weight: &Field,
    epsilon: f64,
) -> Result<LinearStepProblem> {
    let nm = prev.n_modes();
    let ng = prev.grid_n();
    if nm != basis.n() {
        return Err(Error::Config(format!(
            "state has {nm} modes but the basis has {}",
            basis.n()
        )));
    }
    if ng != grid.n || weight.n() != ng {
        return Err(Error::Config("grid, state and weight sizes disagree".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "regularization strength must be positive, got {epsilon}"
        )));
    }
    let layout = UnknownLayout::new(ng, nm)?;
    let res = spectral_residual(prev, grid, basis, stiff, nonlin);
    let interior: Vec<(usize, usize)> =
        (1..ng - 1).flat_map(|i| (1..ng - 1).map(move |j| (i, j))).collect();
    let lins = linearize_nonlinearity(prev, grid, basis, nonlin, &interior);

    let h = grid.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 1.0 / (2.0 * h);
    let se = epsilon.sqrt();
    let n_pde_rows = interior.len() * nm;
    let nnz_estimate = n_pde_rows * 5 * nm + ng * ng * nm * 15;
    let mut builder = CsrBuilder::with_capacity(layout.n_unknowns(), nnz_estimate);
    let mut rhs: Vec<f64> = Vec::with_capacity(n_pde_rows + ng * ng * nm * 6);

    // PDE rows: one per interior node and mode, scaled by √w·h.
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(5 * nm);
    for (node_idx, &(i, j)) in interior.iter().enumerate() {
        let sigma = weight.at(i, j).sqrt() * h;
        let lin = &lins[node_idx];
        for m in 0..nm {
            let a_row = &lin.a[m * nm..(m + 1) * nm];
            let bx_row = &lin.bx[m * nm..(m + 1) * nm];
            let by_row = &lin.by[m * nm..(m + 1) * nm];
            row.clear();
            let mut block = |ii: usize, jj: usize, f: &dyn Fn(usize) -> f64| {
                if let Some(slot) = layout.slot(ii, jj) {
                    let base = slot * nm;
                    for n in 0..nm {
                        let v = f(n);
                        if v != 0.0 {
                            row.push((base + n, sigma * v));
                        }
                    }
                }
            };
            block(i - 1, j, &|n| if n == m { inv_h2 - bx_row[n] * inv_2h } else { -bx_row[n] * inv_2h });
            block(i, j - 1, &|n| if n == m { inv_h2 - by_row[n] * inv_2h } else { -by_row[n] * inv_2h });
            block(i, j, &|n| {
                let lap = if n == m { -4.0 * inv_h2 } else { 0.0 };
                lap - stiff.at(m, n) + a_row[n]
            });
            block(i, j + 1, &|n| if n == m { inv_h2 + by_row[n] * inv_2h } else { by_row[n] * inv_2h });
            block(i + 1, j, &|n| if n == m { inv_h2 + bx_row[n] * inv_2h } else { bx_row[n] * inv_2h });
            builder.push_row(&row);
            rhs.push(-sigma * res[m].at(i, j));
        }
    }

    // Regularization rows: ε‖U + φ‖²_{H²} as √ε-scaled difference rows over
    // the whole grid, with the current state folded into the right-hand side.
    for m in 0..nm {
        let comp = &prev.comps[m];
        let col_of = |i: usize, j: usize| layout.slot(i, j).map(|s| layout.col(s, m));
        let mut push = |entries: &mut Vec<(usize, f64)>, rhs_val: f64| {
            entries.sort_unstable_by_key(|e| e.0);
            builder.push_row(entries);
            rhs.push(rhs_val);
        };
        let mut ents: Vec<(usize, f64)> = Vec::with_capacity(4);
        // value term, weight h
        for i in 0..ng {
            for j in 0..ng {
                ents.clear();
                if let Some(c) = col_of(i, j) {
                    ents.push((c, se * h));
                }
                push(&mut ents, -se * h * comp.at(i, j));
            }
        }
        // forward first differences, weight 1
        for i in 0..ng - 1 {
            for j in 0..ng {
                ents.clear();
                if let Some(c) = col_of(i, j) {
                    ents.push((c, -se));
                }
                if let Some(c) = col_of(i + 1, j) {
                    ents.push((c, se));
                }
                push(&mut ents, -se * (comp.at(i + 1, j) - comp.at(i, j)));
            }
        }
        for i in 0..ng {
            for j in 0..ng - 1 {
                ents.clear();
                if let Some(c) = col_of(i, j) {
                    ents.push((c, -se));
                }
                if let Some(c) = col_of(i, j + 1) {
                    ents.push((c, se));
                }
                push(&mut ents, -se * (comp.at(i, j + 1) - comp.at(i, j)));
            }
        }
        // pure second differences, weight 1/h
        let sh = se / h;
        for i in 1..ng - 1 {
            for j in 0..ng {
                ents.clear();
                if let Some(c) = col_of(i - 1, j) {
                    ents.push((c, sh));
                }
                if let Some(c) = col_of(i, j) {
                    ents.push((c, -2.0 * sh));
                }
                if let Some(c) = col_of(i + 1, j) {
                    ents.push((c, sh));
                }
                push(&mut ents, -sh * (comp.at(i - 1, j) - 2.0 * comp.at(i, j) + comp.at(i + 1, j)));
            }
        }
        for i in 0..ng {
            for j in 1..ng - 1 {
                ents.clear();
                if let Some(c) = col_of(i, j - 1) {
                    ents.push((c, sh));
                }
                if let Some(c) = col_of(i, j) {
                    ents.push((c, -2.0 * sh));
                }
                if let Some(c) = col_of(i, j + 1) {
                    ents.push((c, sh));
                }
                push(&mut ents, -sh * (comp.at(i, j - 1) - 2.0 * comp.at(i, j) + comp.at(i, j + 1)));
            }
        }
        // mixed second difference, centered cross, weight 1/(4h)
        let sm = se / (4.0 * h);
        for i in 1..ng - 1 {
            for j in 1..ng - 1 {
                ents.clear();
                if let Some(c) = col_of(i - 1, j - 1) {
                    ents.push((c, sm));
                }
                if let Some(c) = col_of(i - 1, j + 1) {
                    ents.push((c, -sm));
                }
                if let Some(c) = col_of(i + 1, j - 1) {
                    ents.push((c, -sm));
                }
                if let Some(c) = col_of(i + 1, j + 1) {
                    ents.push((c, sm));
                }
                let cross = comp.at(i - 1, j - 1) - comp.at(i - 1, j + 1)
                    - comp.at(i + 1, j - 1)
                    + comp.at(i + 1, j + 1);
                push(&mut ents, -sm * cross);
            }
        }
    }

    let a = builder.finish();
    let j0 = rhs.iter().map(|v| v * v).sum();
    Ok(LinearStepProblem { a, rhs, layout, j0 })
}

/// How to solve the assembled least-squares problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Iterative bidiagonalization solver; the default at realistic sizes.
    Lsqr,
    /// Normal equations + Cholesky; exact reference for small problems.
    Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct LeastSquaresSettings {
    pub method: SolveMethod,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LeastSquaresSettings {
    fn default() -> Self {
        Self { method: SolveMethod::Lsqr, tol: 1e-8, max_iters: 20000 }
    }
}

/// What happened inside one linear solve.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub method: &'static str,
    pub iterations: usize,
    pub normal_residual: f64,
    pub normal_rhs: f64,
    pub converged: bool,
    pub j0: f64,
    pub j_new: f64,
}

fn solve_dense(a: &CsrMatrix, at: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.ncols;
    if n > 5000 {
        return Err(Error::Config(format!(
            "dense solver limited to 5000 unknowns, got {n}; use the iterative method"
        )));
    }
    // Normal matrix G = AᵀA accumulated row by row of A.
    let mut g = vec![0.0f64; n * n];
    for i in 0..a.nrows {
        let lo = a.row_ptr[i];
        let hi = a.row_ptr[i + 1];
        for k1 in lo..hi {
            let (c1, v1) = (a.col_idx[k1], a.vals[k1]);
            for k2 in lo..hi {
                g[c1 * n + a.col_idx[k2]] += v1 * a.vals[k2];
            }
        }
    }
    let mut atb = vec![0.0f64; n];
    at.matvec(b, &mut atb);
    let gm = nalgebra::DMatrix::from_row_slice(n, n, &g);
    let rhs = nalgebra::DVector::from_column_slice(&atb);
    let chol = nalgebra::Cholesky::new(gm)
        .ok_or_else(|| Error::Numerical("normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Solves the assembled problem and unpacks the increment (which vanishes on
/// the constrained layers by construction). Fails if the step would increase
/// the cost, which cannot happen for a correctly assembled problem.
pub fn solve_step(
    problem: &LinearStepProblem,
    settings: &LeastSquaresSettings,
) -> Result<(SpectralState, StepReport)> {
    let at = problem.a.transpose();
    let (x, method, iterations, normal_residual, normal_rhs, converged) = match settings.method {
        SolveMethod::Lsqr => {
            let r = lsqr(&problem.a, &at, &problem.rhs, settings.tol, settings.max_iters)?;
            (r.x, "lsqr", r.iterations, r.normal_residual, r.normal_rhs, r.converged)
        }
        SolveMethod::Dense => {
            let x = solve_dense(&problem.a, &at, &problem.rhs)?;
            let mut r = vec![0.0; problem.a.nrows];
            problem.a.matvec(&x, &mut r);
            r.iter_mut().zip(&problem.rhs).for_each(|(ri, bi)| *ri = bi - *ri);
            let mut atr = vec![0.0; problem.a.ncols];
            at.matvec(&r, &mut atr);
            let mut atb = vec![0.0; problem.a.ncols];
            at.matvec(&problem.rhs, &mut atb);
            let nr = atr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = atb.iter().map(|v| v * v).sum::<f64>().sqrt();
            (x, "dense", 1usize, nr, nb, true)
        }
    };
    let mut ax = vec![0.0; problem.a.nrows];
    problem.a.matvec(&x, &mut ax);
    let j_new: f64 =
        ax.iter().zip(&problem.rhs).map(|(axi, bi)| (bi - axi) * (bi - axi)).sum();
    if j_new > problem.j0 * (1.0 + 1e-9) + 1e-300 {
        return Err(Error::Numerical(format!(
            "least-squares step increased the cost ({} -> {})",
            problem.j0, j_new
        )));
    }
    let report = StepReport {
        method,
        iterations,
        normal_residual,
        normal_rhs,
        converged,
        j0: problem.j0,
        j_new,
    };
    Ok((problem.layout.unpack(&x), report))
}
