//! Reconstruction of the initial source of a nonlinear parabolic equation
//! from lateral Cauchy boundary data.
//!
//! The forward model is `u_t = Δu + F(x, u, ∇u)` on a square, with the unknown
//! initial state `u(·,0) = p`. Given both Dirichlet and Neumann traces of `u`
//! on the lateral boundary of a sub-square, the solver expands `u` in a
//! dedicated orthonormal basis in time, truncates to `N` coefficient fields,
//! and recovers them from the resulting coupled quasilinear elliptic system by
//! a weighted least-squares Newton iteration. The source is then read off as
//! the time-zero synthesis of the recovered coefficients.
//!
//! Module map:
//! - [`grid`]: square grids, scalar/vector fields, finite-difference stencils
//! - [`time_basis`]: quadrature, the orthonormal time basis, stiffness matrix
//! - [`forward`]: explicit forward solver, boundary traces, noise model
//! - [`spectral`]: coefficient-field states and nonlinearity projections
//! - [`carleman`]: weighted least-squares step (weight, assembly, solvers)
//! - [`newton`]: outer iteration, reconstruction, quality metrics
//! - [`io`]: experiment configuration, trace persistence, result files

pub mod carleman;
pub mod forward;
pub mod grid;
pub mod io;
pub mod newton;
pub mod sparse;
pub mod spectral;
pub mod time_basis;

/// Crate-wide error type. The CLI maps variants onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or key; message carries the line number
    /// when the error originates from a config file.
    #[error("config error: {0}")]
    Config(String),
    /// Numerical failure: CFL violation, lost finiteness, solver divergence.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Structurally invalid data file (bad magic, truncated payload, ...).
    #[error("file format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
