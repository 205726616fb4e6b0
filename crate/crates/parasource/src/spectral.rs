//! Spectral-in-time representation of the parabolic solution.
//!
//! The solution is approximated as u(x,t) ≈ Σ_m u_m(x)·Ψ_m(t). A state holds
//! the N coefficient fields u_m on the inversion grid. Projecting the PDE
//! onto each basis function turns it into a coupled quasilinear elliptic
//! system: Δu_m − Σ_n s_mn u_n + 𝔣_m(x, U, ∇U) = 0, where s_mn couples the
//! modes through the time derivative and 𝔣_m projects the nonlinearity.

use rayon::prelude::*;

use crate::forward::{BoundaryTraces, Nonlinearity};
use crate::grid::{gradient, laplacian, Field, Grid2D, VecField};
use crate::time_basis::{StiffnessMatrix, TimeBasis};
use crate::{Error, Result};

/// Coefficient fields of a spectral-in-time solution on the inversion grid.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub comps: Vec<Field>,
}

impl SpectralState {
    pub fn zeros(n_modes: usize, grid_n: usize) -> Self {
        Self { comps: (0..n_modes).map(|_| Field::zeros(grid_n)).collect() }
    }

    pub fn n_modes(&self) -> usize {
        self.comps.len()
    }

    pub fn grid_n(&self) -> usize {
        self.comps[0].n()
    }

    /// self += s·other.
    pub fn add_scaled(&mut self, other: &SpectralState, s: f64) {
        assert_eq!(self.n_modes(), other.n_modes());
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += s * y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(Field::max_abs).fold(0.0, f64::max)
    }

    /// Synthesized field at a time node: Σ_m u_m·Ψ_m(t_k).
    pub fn at_time_node(&self, basis: &TimeBasis, k: usize) -> Field {
        let n = self.grid_n();
        let mut out = Field::zeros(n);
        for (m, comp) in self.comps.iter().enumerate() {
            let p = basis.psi(m)[k];
            out.as_mut_slice()
                .iter_mut()
                .zip(comp.as_slice())
                .for_each(|(o, c)| *o += p * c);
        }
        out
    }

    /// The reconstructed initial source: Σ_m u_m·Ψ_m(0).
    pub fn source_at_t0(&self, basis: &TimeBasis) -> Field {
        let n = self.grid_n();
        let psi0 = basis.psi0();
        let mut out = Field::zeros(n);
        for (m, comp) in self.comps.iter().enumerate() {
            let p = psi0[m];
            out.as_mut_slice()
                .iter_mut()
                .zip(comp.as_slice())
                .for_each(|(o, c)| *o += p * c);
        }
        out
    }
}

/// Basis coefficients of the Cauchy data, per boundary node.
#[derive(Debug, Clone)]
pub struct BoundaryModeData {
    /// g0 coefficients: `[node][mode]`.
    pub g0: Vec<Vec<f64>>,
    /// g1 coefficients: `[node][mode]`.
    pub g1: Vec<Vec<f64>>,
}

/// Projects measured time series onto the basis, node by node.
pub fn boundary_coeffs(traces: &BoundaryTraces, basis: &TimeBasis) -> Result<BoundaryModeData> {
    if traces.nt != basis.quad.nt || (traces.t_end - basis.quad.t_end).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "trace sampling (nt = {}, T = {}) does not match the basis quadrature (nt = {}, T = {})",
            traces.nt, traces.t_end, basis.quad.nt, basis.quad.t_end
        )));
    }
    let project_all = |series: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        series
            .iter()
            .map(|s| {
                if s.len() != traces.nt + 1 {
                    return Err(Error::Format(format!(
                        "trace series has {} samples, expected {}",
                        s.len(),
                        traces.nt + 1
                    )));
                }
                Ok(basis.project(s))
            })
            .collect()
    };
    Ok(BoundaryModeData { g0: project_all(&traces.g0)?, g1: project_all(&traces.g1)? })
}

/// Basis-truncation error of measured data on the top side of the boundary.
#[derive(Debug, Clone)]
pub struct TruncationDiagnostic {
    /// x coordinate of each diagnostic node, ascending.
    pub xs: Vec<f64>,
    /// e_N(x, t_k) = |g0(x, t_k) − Σ_n g0_n(x)·Ψ_n(t_k)|, per node.
    pub e: Vec<Vec<f64>>,
    /// sup over nodes and times.
    pub max_abs: f64,
    /// √(Σ_x h·Σ_k w_k·e²), the discrete L² size over the side × (0,T).
    pub l2: f64,
}

/// Measures how much of the Dirichlet data the truncated basis cannot
/// represent, on the side {y = R, |x| ≤ R} the diagnostic is defined over.
pub fn truncation_diagnostic(
    traces: &BoundaryTraces,
    basis: &TimeBasis,
) -> Result<TruncationDiagnostic> {
    if traces.nt != basis.quad.nt || (traces.t_end - basis.quad.t_end).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "trace sampling (nt = {}, T = {}) does not match the basis quadrature (nt = {}, T = {})",
            traces.nt, traces.t_end, basis.quad.nt, basis.quad.t_end
        )));
    }
    let mut xs = Vec::new();
    let mut e = Vec::new();
    let mut max_abs = 0.0f64;
    let mut l2_sq = 0.0f64;
    for (k, node) in traces.boundary.nodes.iter().enumerate() {
        if node.side != crate::grid::Side::Top {
            continue;
        }
        let series = &traces.g0[k];
        let err = basis.truncation_error(series, basis.n());
        for (kk, v) in err.iter().enumerate() {
            max_abs = max_abs.max(*v);
            l2_sq += traces.grid.h * basis.quad.weights[kk] * v * v;
        }
        xs.push(traces.grid.coord(node.i));
        e.push(err);
    }
    Ok(TruncationDiagnostic { xs, e, max_abs, l2: l2_sq.sqrt() })
}

/// Projects a recorded evolution (one field per quadrature node) onto the
/// basis. The result is the best representation the truncated ansatz can
/// reach, which bounds what any reconstruction from the same basis can do.
pub fn project_history(fields: &[Field], basis: &TimeBasis) -> Result<SpectralState> {
    if fields.len() != basis.quad.nt + 1 {
        return Err(Error::Config(format!(
            "history has {} snapshots, quadrature expects {}",
            fields.len(),
            basis.quad.nt + 1
        )));
    }
    let ng = fields[0].n();
    let n_modes = basis.n();
    let mut state = SpectralState::zeros(n_modes, ng);
    let weights = &basis.quad.weights;
    for (k, f) in fields.iter().enumerate() {
        for m in 0..n_modes {
            let wp = weights[k] * basis.psi(m)[k];
            state.comps[m]
                .as_mut_slice()
                .iter_mut()
                .zip(f.as_slice())
                .for_each(|(o, v)| *o += wp * v);
        }
    }
    Ok(state)
}

/// Synthesized mode values at one node: fills `u[m]`, `gx[m]`, `gy[m]`.
fn gather_node(
    comps: &[Field],
    grads: &[VecField],
    i: usize,
    j: usize,
    u: &mut [f64],
    gx: &mut [f64],
    gy: &mut [f64],
) {
    for m in 0..comps.len() {
        u[m] = comps[m].at(i, j);
        gx[m] = grads[m].x.at(i, j);
        gy[m] = grads[m].y.at(i, j);
    }
}

/// 𝔣_m(x) = ∫ F(u(x,t), ∇u(x,t))·Ψ_m(t) dt at interior nodes (boundary rows
/// are left zero; the elliptic residual is only formed in the interior).
pub fn nonlinearity_projection(
    state: &SpectralState,
    grid: &Grid2D,
    basis: &TimeBasis,
    nonlin: &Nonlinearity,
) -> Vec<Field> {
    let n_modes = state.n_modes();
    let ng = state.grid_n();
    let mut out: Vec<Field> = (0..n_modes).map(|_| Field::zeros(ng)).collect();
    if nonlin.kind == crate::forward::NonlinKind::Zero {
        return out;
    }
    let grads: Vec<VecField> = state.comps.iter().map(|c| gradient(c, grid)).collect();
    let psi_tm = basis.samples_time_major();
    let weights = &basis.quad.weights;
    let nt = basis.quad.nt;

    // One flat buffer per mode, written row-disjointly in parallel.
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; ng * n_modes]; ng];
    rows.par_iter_mut().enumerate().for_each(|(i, row)| {
        if i == 0 || i == ng - 1 {
            return;
        }
        let mut u = vec![0.0; n_modes];
        let mut gx = vec![0.0; n_modes];
        let mut gy = vec![0.0; n_modes];
        for j in 1..ng - 1 {
            gather_node(&state.comps, &grads, i, j, &mut u, &mut gx, &mut gy);
            let acc = &mut row[j * n_modes..(j + 1) * n_modes];
            for k in 0..=nt {
                let prow = &psi_tm[k * n_modes..(k + 1) * n_modes];
                let mut uv = 0.0;
                let mut gxv = 0.0;
                let mut gyv = 0.0;
                for m in 0..n_modes {
                    uv += prow[m] * u[m];
                    gxv += prow[m] * gx[m];
                    gyv += prow[m] * gy[m];
                }
                let wf = weights[k] * nonlin.value(uv, gxv, gyv);
                if wf != 0.0 {
                    for m in 0..n_modes {
                        acc[m] += wf * prow[m];
                    }
                }
            }
        }
    });
    for (i, row) in rows.iter().enumerate() {
        for j in 0..ng {
            for m in 0..n_modes {
                out[m].set(i, j, row[j * n_modes + m]);
            }
        }
    }
    out
}

/// Per-node linearization of the projected nonlinearity around a state.
///
/// The entry layout is row-major `m*N + n`: the m-th projected equation's
/// sensitivity to mode n of the increment (value and gradient components).
#[derive(Debug, Clone)]
pub struct NodeLinearization {
    pub a: Vec<f64>,
    pub bx: Vec<f64>,
    pub by: Vec<f64>,
}

/// Computes a_mn = ∫F_u Ψ_nΨ_m, bx_mn = ∫F_gx Ψ_nΨ_m, by_mn = ∫F_gy Ψ_nΨ_m
/// at each requested node, with F's arguments synthesized from `state`.
pub fn linearize_nonlinearity(
    state: &SpectralState,
    grid: &Grid2D,
    basis: &TimeBasis,
    nonlin: &Nonlinearity,
    nodes: &[(usize, usize)],
) -> Vec<NodeLinearization> {
    let n_modes = state.n_modes();
    let zero = NodeLinearization {
        a: vec![0.0; n_modes * n_modes],
        bx: vec![0.0; n_modes * n_modes],
        by: vec![0.0; n_modes * n_modes],
    };
    if nonlin.kind == crate::forward::NonlinKind::Zero {
        return vec![zero; nodes.len()];
    }
    let grads: Vec<VecField> = state.comps.iter().map(|c| gradient(c, grid)).collect();
    let psi_tm = basis.samples_time_major();
    let weights = &basis.quad.weights;
    let nt = basis.quad.nt;

    nodes
        .par_iter()
        .map(|&(i, j)| {
            let mut lin = zero.clone();
            let mut u = vec![0.0; n_modes];
            let mut gx = vec![0.0; n_modes];
            let mut gy = vec![0.0; n_modes];
            gather_node(&state.comps, &grads, i, j, &mut u, &mut gx, &mut gy);
            for k in 0..=nt {
                let prow = &psi_tm[k * n_modes..(k + 1) * n_modes];
                let mut uv = 0.0;
                let mut gxv = 0.0;
                let mut gyv = 0.0;
                for m in 0..n_modes {
                    uv += prow[m] * u[m];
                    gxv += prow[m] * gx[m];
                    gyv += prow[m] * gy[m];
                }
                let w = weights[k];
                let wu = w * nonlin.d_u(uv, gxv, gyv);
                let (dgx, dgy) = nonlin.d_grad(uv, gxv, gyv);
                let (wgx, wgy) = (w * dgx, w * dgy);
                // Upper triangle only; the products are symmetric in (m, n).
                for m in 0..n_modes {
                    let pm = prow[m];
                    let row_a = &mut lin.a[m * n_modes..(m + 1) * n_modes];
                    for nn in m..n_modes {
                        row_a[nn] += wu * pm * prow[nn];
                    }
                    let row_bx = &mut lin.bx[m * n_modes..(m + 1) * n_modes];
                    for nn in m..n_modes {
                        row_bx[nn] += wgx * pm * prow[nn];
                    }
                    let row_by = &mut lin.by[m * n_modes..(m + 1) * n_modes];
                    for nn in m..n_modes {
                        row_by[nn] += wgy * pm * prow[nn];
                    }
                }
            }
            for m in 0..n_modes {
                for nn in 0..m {
                    lin.a[m * n_modes + nn] = lin.a[nn * n_modes + m];
                    lin.bx[m * n_modes + nn] = lin.bx[nn * n_modes + m];
                    lin.by[m * n_modes + nn] = lin.by[nn * n_modes + m];
                }
            }
            lin
        })
        .collect()
}

/// Elliptic residual fields 𝓛_m(U) = Δu_m − (SU)_m + 𝔣_m(U) at interior
/// nodes (boundary rows zero).
pub fn spectral_residual(
    state: &SpectralState,
    grid: &Grid2D,
    basis: &TimeBasis,
    stiffness: &StiffnessMatrix,
    nonlin: &Nonlinearity,
) -> Vec<Field> {
    let n_modes = state.n_modes();
    let ng = state.grid_n();
    let f_proj = nonlinearity_projection(state, grid, basis, nonlin);
    let laps: Vec<Field> = state.comps.par_iter().map(|c| laplacian(c, grid)).collect();
    (0..n_modes)
        .into_par_iter()
        .map(|m| {
            let mut out = Field::zeros(ng);
            for i in 1..ng - 1 {
                for j in 1..ng - 1 {
                    let mut su = 0.0;
                    for nn in 0..n_modes {
                        su += stiffness.at(m, nn) * state.comps[nn].at(i, j);
                    }
                    out.set(i, j, laps[m].at(i, j) - su + f_proj[m].at(i, j));
                }
            }
            out
        })
        .collect()
}
