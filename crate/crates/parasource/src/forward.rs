//! Explicit forward solver for u_t = Δu + F(x, u, ∇u) on the large square,
//! with homogeneous Dirichlet data on its outer boundary, plus extraction of
//! the Cauchy pair (u, ∂_ν u) on the boundary of the inner inversion square
//! and the multiplicative noise model applied to measured traces.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grid::{restrict, BoundaryIndex, Field, Grid2D, Restriction};
use crate::{Error, Result};

/// Gaussian phantom shape parameter: p(x) = e^(-|x|²/(4s)).
/// With pure diffusion the exact evolution is (s/(s+t))·e^(-|x|²/(4(s+t))).
pub const GAUSSIAN_S: f64 = 0.05;

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

/// Base nonlinearity shapes. All are functions of (u, ∇u) only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinKind {
    /// F ≡ 0 (pure heat flow; used for verification against the free kernel).
    Zero,
    /// F = u (the linearization used to produce the initial guess).
    Linear,
    /// F = u(1 - u).
    Fisher,
    /// F = u + √(|∇u|² + 1).
    SqrtGrad,
}

/// A nonlinearity with optional smooth cutoff.
///
/// The cutoff multiplies F by χ_B(|u| + |∇u|), a C² bump equal to 1 below B
/// and 0 above 2B, so evaluation routes through the bounded version while the
/// shipped test problems (which stay well below any sensible B) are untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    pub kind: NonlinKind,
    pub cutoff_b: Option<f64>,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Self { kind: NonlinKind::Zero, cutoff_b: None }
    }

    pub fn linear() -> Self {
        Self { kind: NonlinKind::Linear, cutoff_b: None }
    }

    pub fn fisher() -> Self {
        Self { kind: NonlinKind::Fisher, cutoff_b: None }
    }

    pub fn sqrt_grad() -> Self {
        Self { kind: NonlinKind::SqrtGrad, cutoff_b: None }
    }

    pub fn with_cutoff(mut self, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::Config(format!("cutoff bound must be positive, got {b}")));
        }
        self.cutoff_b = Some(b);
        Ok(self)
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero()),
            "linear" => Ok(Self::linear()),
            "fisher" => Ok(Self::fisher()),
            "sqrtgrad" => Ok(Self::sqrt_grad()),
            _ => Err(Error::Config(format!(
                "unknown nonlinearity `{name}` (expected zero, linear, fisher, sqrtgrad)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            NonlinKind::Zero => "zero",
            NonlinKind::Linear => "linear",
            NonlinKind::Fisher => "fisher",
            NonlinKind::SqrtGrad => "sqrtgrad",
        }
    }

    /// Whether evaluation reads the gradient arguments.
    pub fn needs_gradient(&self) -> bool {
        self.kind == NonlinKind::SqrtGrad || self.cutoff_b.is_some()
    }

    fn raw(&self, u: f64, gx: f64, gy: f64) -> f64 {
        match self.kind {
            NonlinKind::Zero => 0.0,
            NonlinKind::Linear => u,
            NonlinKind::Fisher => u * (1.0 - u),
            NonlinKind::SqrtGrad => u + (gx * gx + gy * gy + 1.0).sqrt(),
        }
    }

    fn raw_du(&self, u: f64, _gx: f64, _gy: f64) -> f64 {
        match self.kind {
            NonlinKind::Zero => 0.0,
            NonlinKind::Linear => 1.0,
            NonlinKind::Fisher => 1.0 - 2.0 * u,
            NonlinKind::SqrtGrad => 1.0,
        }
    }

    fn raw_dgrad(&self, _u: f64, gx: f64, gy: f64) -> (f64, f64) {
        match self.kind {
            NonlinKind::Zero | NonlinKind::Linear | NonlinKind::Fisher => (0.0, 0.0),
            NonlinKind::SqrtGrad => {
                let r = (gx * gx + gy * gy + 1.0).sqrt();
                (gx / r, gy / r)
            }
        }
    }

    /// Quintic-smoothstep bump: (χ(s), χ'(s)); C² at both joins.
    fn chi(b: f64, s: f64) -> (f64, f64) {
        if s <= b {
            (1.0, 0.0)
        } else if s >= 2.0 * b {
            (0.0, 0.0)
        } else {
            let x = (s - b) / b;
            let step = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
            let dstep = 30.0 * x * x * (1.0 - x) * (1.0 - x) / b;
            (1.0 - step, -dstep)
        }
    }

    pub fn value(&self, u: f64, gx: f64, gy: f64) -> f64 {
        let f = self.raw(u, gx, gy);
        match self.cutoff_b {
            None => f,
            Some(b) => {
                let s = u.abs() + (gx * gx + gy * gy).sqrt();
                Self::chi(b, s).0 * f
            }
        }
    }

    pub fn d_u(&self, u: f64, gx: f64, gy: f64) -> f64 {
        match self.cutoff_b {
            None => self.raw_du(u, gx, gy),
            Some(b) => {
                let gnorm = (gx * gx + gy * gy).sqrt();
                let (c, dc) = Self::chi(b, u.abs() + gnorm);
                dc * u.signum_or_zero() * self.raw(u, gx, gy) + c * self.raw_du(u, gx, gy)
            }
        }
    }

    pub fn d_grad(&self, u: f64, gx: f64, gy: f64) -> (f64, f64) {
        match self.cutoff_b {
            None => self.raw_dgrad(u, gx, gy),
            Some(b) => {
                let gnorm = (gx * gx + gy * gy).sqrt();
                let (c, dc) = Self::chi(b, u.abs() + gnorm);
                let f = self.raw(u, gx, gy);
                let (dfx, dfy) = self.raw_dgrad(u, gx, gy);
                let (nx, ny) = if gnorm > 0.0 { (gx / gnorm, gy / gnorm) } else { (0.0, 0.0) };
                (dc * nx * f + c * dfx, dc * ny * f + c * dfy)
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

// ---------------------------------------------------------------------------
// phantoms
// ---------------------------------------------------------------------------

/// One connected piece of the true source, for reconstruction metrics.
#[derive(Debug, Clone, Copy)]
pub struct Inclusion {
    pub center: (f64, f64),
    /// Radius of the support disk (for the Gaussian: its half-max radius).
    pub radius: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Disk8,
    FourDisks,
    Gaussian,
}

/// True initial source p(x), extended by zero outside its support.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    /// Single disk of value 8, center (0, 0.3), radius 0.45.
    pub fn disk8() -> Self {
        Self {
            kind: PhantomKind::Disk8,
            inclusions: vec![Inclusion { center: (0.0, 0.3), radius: 0.45, peak: 8.0 }],
        }
    }

    /// Four disks of radius 0.35: 12 up-right, 10 down-left, 14 down-right,
    /// 9 up-left.
    pub fn four_disks() -> Self {
        Self {
            kind: PhantomKind::FourDisks,
            inclusions: vec![
                Inclusion { center: (0.5, 0.5), radius: 0.35, peak: 12.0 },
                Inclusion { center: (-0.5, -0.5), radius: 0.35, peak: 10.0 },
                Inclusion { center: (0.5, -0.5), radius: 0.35, peak: 14.0 },
                Inclusion { center: (-0.5, 0.5), radius: 0.35, peak: 9.0 },
            ],
        }
    }

    /// Smooth unit-amplitude Gaussian at the origin (verification phantom).
    pub fn gaussian() -> Self {
        Self {
            kind: PhantomKind::Gaussian,
            inclusions: vec![Inclusion {
                center: (0.0, 0.0),
                radius: (4.0 * GAUSSIAN_S * 2.0f64.ln()).sqrt(),
                peak: 1.0,
            }],
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "disk8" => Ok(Self::disk8()),
            "fourdisks" => Ok(Self::four_disks()),
            "gaussian" => Ok(Self::gaussian()),
            _ => Err(Error::Config(format!(
                "unknown phantom `{name}` (expected disk8, fourdisks, gaussian)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PhantomKind::Disk8 => "disk8",
            PhantomKind::FourDisks => "fourdisks",
            PhantomKind::Gaussian => "gaussian",
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            PhantomKind::Gaussian => {
                let r2 = x * x + y * y;
                (-r2 / (4.0 * GAUSSIAN_S)).exp()
            }
            _ => {
                for inc in &self.inclusions {
                    let dx = x - inc.center.0;
                    let dy = y - inc.center.1;
                    if dx * dx + dy * dy <= inc.radius * inc.radius {
                        return inc.peak;
                    }
                }
                0.0
            }
        }
    }

    pub fn sample(&self, grid: &Grid2D) -> Field {
        Field::from_fn(grid, |x, y| self.value(x, y))
    }
}

// ---------------------------------------------------------------------------
// traces
// ---------------------------------------------------------------------------

/// Cauchy data on the inversion boundary: per boundary node, the Dirichlet
/// series g0 = u and the Neumann series g1 = ∂_ν u, each sampled at the
/// nt+1 forward time steps. Node order follows [`BoundaryIndex`].
#[derive(Debug, Clone)]
pub struct BoundaryTraces {
    pub grid: Grid2D,
    pub boundary: BoundaryIndex,
    pub t_end: f64,
    pub nt: usize,
    pub g0: Vec<Vec<f64>>,
    pub g1: Vec<Vec<f64>>,
}

impl BoundaryTraces {
    pub fn node_coord(&self, idx: usize) -> (f64, f64) {
        let b = &self.boundary.nodes[idx];
        (self.grid.coord(b.i), self.grid.coord(b.j))
    }
}

/// Output of a forward run.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub traces: BoundaryTraces,
    pub restriction: Restriction,
    /// u restricted to the inversion grid at every step, when requested.
    pub omega_history: Option<Vec<Field>>,
    /// Final state on the full solver grid.
    pub final_field: Field,
}

/// Smallest nt satisfying the explicit stability bound dt ≤ h²/4.
pub fn required_nt(t_end: f64, h: f64) -> usize {
    (4.0 * t_end / (h * h)).ceil() as usize
}

/// One-slice trace extraction: g0 by restriction, g1 by the inward-looking
/// second-order normal stencil evaluated in inversion-grid indices.
pub fn extract_traces(
    parent_field: &Field,
    restriction: &Restriction,
    boundary: &BoundaryIndex,
) -> (Vec<f64>, Vec<f64>) {
    extract_from_slice(parent_field.as_slice(), parent_field.n(), restriction, boundary)
}

fn extract_from_slice(
    data: &[f64],
    parent_n: usize,
    restriction: &Restriction,
    boundary: &BoundaryIndex,
) -> (Vec<f64>, Vec<f64>) {
    let off = restriction.offset;
    let h = restriction.grid.h;
    let at = |i: usize, j: usize| data[(i + off) * parent_n + (j + off)];
    let mut g0 = Vec::with_capacity(boundary.len());
    let mut g1 = Vec::with_capacity(boundary.len());
    for b in &boundary.nodes {
        let (di, dj) = (b.normal.0 as i64, b.normal.1 as i64);
        let f0 = at(b.i, b.j);
        let f1 = at((b.i as i64 - di) as usize, (b.j as i64 - dj) as usize);
        let f2 = at((b.i as i64 - 2 * di) as usize, (b.j as i64 - 2 * dj) as usize);
        g0.push(f0);
        g1.push((3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h));
    }
    (g0, g1)
}

/// Marches u_t = Δu + F explicitly from u(·,0) = p with zero Dirichlet data
/// on the outer boundary, collecting Cauchy traces on the inversion boundary.
pub fn run_forward(
    grid1: &Grid2D,
    omega_radius: f64,
    t_end: f64,
    nt: usize,
    phantom: &Phantom,
    nonlin: &Nonlinearity,
    record_omega_history: bool,
) -> Result<ForwardRun> {
    let n = grid1.n;
    let h = grid1.h;
    let dt = t_end / nt as f64;
    if dt > h * h / 4.0 {
        return Err(Error::Numerical(format!(
            "explicit step violates stability: dt = {dt:.6e} > h²/4 = {:.6e}; need nt >= {}",
            h * h / 4.0,
            required_nt(t_end, h)
        )));
    }
    let restriction = restrict(grid1, omega_radius)?;
    if restriction.grid.n < 5 {
        return Err(Error::Config(format!(
            "inversion grid has only {} nodes per axis; need at least 5",
            restriction.grid.n
        )));
    }
    let boundary = BoundaryIndex::of(restriction.grid.n);

    let mut cur = phantom.sample(grid1).as_slice().to_vec();
    // Outer Dirichlet condition applies from the first step on; the initial
    // sample keeps whatever the phantom put there (zero for all shipped ones).
    let mut next = vec![0.0f64; n * n];

    let nb = boundary.len();
    let mut g0 = vec![Vec::with_capacity(nt + 1); nb];
    let mut g1 = vec![Vec::with_capacity(nt + 1); nb];
    let mut omega_history = record_omega_history.then(|| Vec::with_capacity(nt + 1));

    let record = |data: &[f64],
                      g0: &mut Vec<Vec<f64>>,
                      g1: &mut Vec<Vec<f64>>,
                      omega_history: &mut Option<Vec<Field>>| {
        let (s0, s1) = extract_from_slice(data, n, &restriction, &boundary);
        for (dst, v) in g0.iter_mut().zip(s0) {
            dst.push(v);
        }
        for (dst, v) in g1.iter_mut().zip(s1) {
            dst.push(v);
        }
        if let Some(hist) = omega_history {
            let mut f = Field::zeros(n);
            f.as_mut_slice().copy_from_slice(data);
            hist.push(restriction.extract(&f));
        }
    };
    record(&cur, &mut g0, &mut g1, &mut omega_history);

    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 1.0 / (2.0 * h);
    let needs_grad = nonlin.needs_gradient();
    for step in 0..nt {
        {
            let cur_ref = &cur;
            // Rows are disjoint output slices; the stencil only reads `cur`.
            next[n..n * (n - 1)]
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(row_off, out_row)| {
                    let i = row_off + 1;
                    out_row[0] = 0.0;
                    out_row[n - 1] = 0.0;
                    for j in 1..n - 1 {
                        let c = cur_ref[i * n + j];
                        let xe = cur_ref[(i + 1) * n + j];
                        let xw = cur_ref[(i - 1) * n + j];
                        let yn = cur_ref[i * n + j + 1];
                        let ys = cur_ref[i * n + j - 1];
                        let lap = (xe + xw + yn + ys - 4.0 * c) * inv_h2;
                        let f = if needs_grad {
                            nonlin.value(c, (xe - xw) * inv_2h, (yn - ys) * inv_2h)
                        } else {
                            nonlin.value(c, 0.0, 0.0)
                        };
                        out_row[j] = c + dt * (lap + f);
                    }
                });
        }
        // Outer boundary rows pinned to zero (already zero-initialized and
        // rewritten above for the side columns).
        for j in 0..n {
            next[j] = 0.0;
            next[(n - 1) * n + j] = 0.0;
        }
        if !next.par_iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "forward solution lost finiteness at step {} (t = {:.6})",
                step + 1,
                (step + 1) as f64 * dt
            )));
        }
        std::mem::swap(&mut cur, &mut next);
        record(&cur, &mut g0, &mut g1, &mut omega_history);
    }

    let mut final_field = Field::zeros(n);
    final_field.as_mut_slice().copy_from_slice(&cur);
    Ok(ForwardRun {
        traces: BoundaryTraces { grid: restriction.grid, boundary, t_end, nt, g0, g1 },
        restriction,
        omega_history,
        final_field,
    })
}

// ---------------------------------------------------------------------------
// noise
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw on [-1, 1) keyed by (seed, node, series, step); the key fully
/// determines the draw, so noising commutes with any restriction of the
/// sample set.
fn noise_xi(seed: u64, node: u64, series: u64, step: u64) -> f64 {
    let mut key = splitmix64(seed ^ 0x6A09_E667_F3BC_C909);
    key = splitmix64(key ^ node.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    key = splitmix64(key ^ series.wrapping_add(0x3C6E_F372_FE94_F82B));
    key = splitmix64(key ^ step.wrapping_add(0xBB67_AE85_84CA_A73B));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let x = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * x - 1.0
}

/// Multiplicative noise g ↦ g·(1 + δ·ξ) with ξ i.i.d. uniform on [-1, 1),
/// drawn per sample from a seed-keyed stream. δ = 0 returns bit-identical
/// traces.
pub fn apply_noise(traces: &BoundaryTraces, delta: f64, seed: u64) -> Result<BoundaryTraces> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!("noise level must lie in [0, 1), got {delta}")));
    }
    let mut out = traces.clone();
    if delta == 0.0 {
        return Ok(out);
    }
    for (node, series) in out.g0.iter_mut().enumerate() {
        for (k, v) in series.iter_mut().enumerate() {
            *v *= 1.0 + delta * noise_xi(seed, node as u64, 0, k as u64);
        }
    }
    for (node, series) in out.g1.iter_mut().enumerate() {
        for (k, v) in series.iter_mut().enumerate() {
            *v *= 1.0 + delta * noise_xi(seed, node as u64, 1, k as u64);
        }
    }
    Ok(out)
}
