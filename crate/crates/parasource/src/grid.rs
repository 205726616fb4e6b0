//! Uniform square grids and the finite-difference stencils used throughout:
//! 5-point Laplacian, central/one-sided gradients, one-sided normal
//! derivatives on the boundary, and restriction of a large grid to the
//! concentric sub-square where the inversion runs.

use crate::{Error, Result};

/// Uniform grid on a centered square, `n` nodes per axis.
///
/// Node coordinates are `coord(k) = origin + k·h`. For grids built with
/// [`Grid2D::centered`] this is `-half_width + k·h` with
/// `h = 2·half_width/(n-1)`; grids produced by [`restrict`] inherit the parent
/// spacing and bit-exact parent coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub n: usize,
    pub h: f64,
    origin: f64,
}

impl Grid2D {
    /// Grid over `[-half_width, half_width]²` with `n` nodes per axis.
    pub fn centered(half_width: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("grid needs at least 3 nodes per axis, got {n}")));
        }
        if !(half_width > 0.0) {
            return Err(Error::Config(format!("grid half-width must be positive, got {half_width}")));
        }
        Ok(Self { n, h: 2.0 * half_width / (n - 1) as f64, origin: -half_width })
    }

    /// Rebuilds a grid from stored metadata (n, spacing, first coordinate).
    pub fn from_raw(n: usize, h: f64, origin: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("grid needs at least 3 nodes per axis, got {n}")));
        }
        if !(h > 0.0) || !h.is_finite() || !origin.is_finite() {
            return Err(Error::Config(format!("invalid grid geometry: h = {h}, origin = {origin}")));
        }
        Ok(Self { n, h, origin })
    }

    /// Coordinate of node index `k` along either axis.
    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.h
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn half_width(&self) -> f64 {
        -self.origin
    }

    /// Total node count `n²`.
    pub fn node_count(&self) -> usize {
        self.n * self.n
    }
}

/// Scalar field sampled on a [`Grid2D`], row-major with the x-index `i` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Sample `f(x, y)` at every node.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n;
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            let x = grid.coord(i);
            for j in 0..n {
                data.push(f(x, grid.coord(j)));
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Vector field (two scalar components) on a grid.
#[derive(Debug, Clone)]
pub struct VecField {
    pub x: Field,
    pub y: Field,
}

/// Boundary side of the square. Corner nodes belong to Bottom/Top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Top,
    Left,
    Right,
}

impl Side {
    pub fn tag(&self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Top => "top",
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// One boundary node with its side tag and outward unit normal (integer).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryNode {
    pub i: usize,
    pub j: usize,
    pub side: Side,
    /// Outward normal in node-index steps: one of (±1,0), (0,±1).
    pub normal: (i32, i32),
}

/// Ordered list of the boundary nodes of an `n × n` grid.
///
/// Iteration order is fixed: bottom row (j=0) with i ascending, top row
/// (j=n-1) with i ascending, then left and right columns with j ascending,
/// corners excluded from the columns. Trace storage follows this order.
#[derive(Debug, Clone)]
pub struct BoundaryIndex {
    pub nodes: Vec<BoundaryNode>,
}

impl BoundaryIndex {
    pub fn of(n: usize) -> Self {
        assert!(n >= 3, "boundary index needs n >= 3");
        let mut nodes = Vec::with_capacity(4 * n - 4);
        for i in 0..n {
            nodes.push(BoundaryNode { i, j: 0, side: Side::Bottom, normal: (0, -1) });
        }
        for i in 0..n {
            nodes.push(BoundaryNode { i, j: n - 1, side: Side::Top, normal: (0, 1) });
        }
        for j in 1..n - 1 {
            nodes.push(BoundaryNode { i: 0, j, side: Side::Left, normal: (-1, 0) });
        }
        for j in 1..n - 1 {
            nodes.push(BoundaryNode { i: n - 1, j, side: Side::Right, normal: (1, 0) });
        }
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// 5-point Laplacian. Boundary rows are set to zero; callers that need
/// boundary behavior handle it explicitly.
pub fn laplacian(f: &Field, grid: &Grid2D) -> Field {
    assert_eq!(f.n, grid.n);
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut out = Field::zeros(n);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = f.at(i + 1, j) + f.at(i - 1, j) + f.at(i, j + 1) + f.at(i, j - 1)
                - 4.0 * f.at(i, j);
            out.set(i, j, v * inv_h2);
        }
    }
    out
}

/// Gradient: central differences inside, second-order one-sided at the edges.
pub fn gradient(f: &Field, grid: &Grid2D) -> VecField {
    assert_eq!(f.n, grid.n);
    let n = grid.n;
    let inv_2h = 1.0 / (2.0 * grid.h);
    let mut gx = Field::zeros(n);
    let mut gy = Field::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let dx = if i == 0 {
                -3.0 * f.at(0, j) + 4.0 * f.at(1, j) - f.at(2, j)
            } else if i == n - 1 {
                3.0 * f.at(n - 1, j) - 4.0 * f.at(n - 2, j) + f.at(n - 3, j)
            } else {
                f.at(i + 1, j) - f.at(i - 1, j)
            };
            let dy = if j == 0 {
                -3.0 * f.at(i, 0) + 4.0 * f.at(i, 1) - f.at(i, 2)
            } else if j == n - 1 {
                3.0 * f.at(i, n - 1) - 4.0 * f.at(i, n - 2) + f.at(i, n - 3)
            } else {
                f.at(i, j + 1) - f.at(i, j - 1)
            };
            gx.set(i, j, dx * inv_2h);
            gy.set(i, j, dy * inv_2h);
        }
    }
    VecField { x: gx, y: gy }
}

/// Outward normal derivative at the boundary nodes, one per [`BoundaryIndex`]
/// entry, via the inward-looking second-order stencil (3f₀ - 4f₁ + f₂)/(2h).
pub fn normal_derivative(f: &Field, boundary: &BoundaryIndex, grid: &Grid2D) -> Vec<f64> {
    assert_eq!(f.n, grid.n);
    assert!(grid.n >= 3);
    let inv_2h = 1.0 / (2.0 * grid.h);
    boundary
        .nodes
        .iter()
        .map(|b| {
            let (di, dj) = b.normal;
            let i1 = (b.i as i64 - di as i64) as usize;
            let j1 = (b.j as i64 - dj as i64) as usize;
            let i2 = (b.i as i64 - 2 * di as i64) as usize;
            let j2 = (b.j as i64 - 2 * dj as i64) as usize;
            (3.0 * f.at(b.i, b.j) - 4.0 * f.at(i1, j1) + f.at(i2, j2)) * inv_2h
        })
        .collect()
}

/// Restriction of a grid to the concentric square `|x| ≤ r`, `|y| ≤ r`.
#[derive(Debug, Clone, Copy)]
pub struct Restriction {
    /// The restricted grid; spacing and node coordinates match the parent.
    pub grid: Grid2D,
    /// Parent index of the restricted grid's first node (same on both axes).
    pub offset: usize,
}

impl Restriction {
    /// Pulls the sub-field on the restricted grid out of a parent field.
    pub fn extract(&self, parent: &Field) -> Field {
        let n = self.grid.n;
        let mut out = Field::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, parent.at(i + self.offset, j + self.offset));
            }
        }
        out
    }
}

/// Restricts `parent` to the nodes with both coordinates in `[-r, r]`.
///
/// The restricted node set of a centered grid is itself centered; its
/// coordinates are the parent's, bit for bit. The extreme retained layer acts
/// as the boundary of the restricted grid (no node is forced to sit exactly
/// at ±r).
pub fn restrict(parent: &Grid2D, r: f64) -> Result<Restriction> {
    if !(r > 0.0 && r < parent.half_width()) {
        return Err(Error::Config(format!(
            "restriction radius {r} must lie in (0, {})",
            parent.half_width()
        )));
    }
    let inside: Vec<usize> = (0..parent.n).filter(|&k| parent.coord(k).abs() <= r).collect();
    if inside.len() < 3 {
        return Err(Error::Config(format!(
            "restriction to |x| <= {r} keeps only {} nodes per axis; need at least 3",
            inside.len()
        )));
    }
    // Coordinates are monotone, so the retained index set is contiguous.
    let offset = inside[0];
    debug_assert_eq!(inside[inside.len() - 1] - offset + 1, inside.len());
    let n = inside.len();
    let origin = parent.coord(offset);
    Ok(Restriction { grid: Grid2D { n, h: parent.h, origin }, offset })
}
