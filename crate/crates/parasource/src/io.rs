//! Configuration parsing and file formats.
//!
//! Configs are flat `key = value` text with `#` comments. Trace recordings
//! are a human-readable `.meta` file plus a little-endian f64 `.bin` payload.
//! All writers go through a temp-file-and-rename so partially written
//! outputs never appear under their final name.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::carleman::{CarlemanParams, LeastSquaresSettings, SolveMethod};
use crate::forward::{BoundaryTraces, Nonlinearity, Phantom};
use crate::grid::{BoundaryIndex, Field, Grid2D};
use crate::newton::{IterationRecord, NewtonSettings, ReconstructionMetrics};
use crate::time_basis::QuadratureGrid;
use crate::{Error, Result};

/// Full experiment description with the shipped problems' values as defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Half-width of the inversion square Ω.
    pub domain_r: f64,
    /// Half-width of the forward-solver square Ω₁.
    pub domain_r1: f64,
    /// Nodes per axis of the forward grid.
    pub n1: usize,
    pub t_end: f64,
    pub nt: usize,
    /// Number of time-basis functions.
    pub n_modes: usize,
    pub phantom: String,
    pub nonlinearity: String,
    pub cutoff_b: Option<f64>,
    pub delta: f64,
    pub seed: u64,
    pub carleman: CarlemanParams,
    pub epsilon: f64,
    pub lsq_tol: f64,
    pub max_lsq_iters: usize,
    pub solver_method: String,
    pub newton_max_iters: usize,
    pub kappa0: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain_r: 1.0,
            domain_r1: 6.0,
            n1: 240,
            t_end: 1.5,
            nt: 3000,
            n_modes: 35,
            phantom: "disk8".into(),
            nonlinearity: "fisher".into(),
            cutoff_b: None,
            delta: 0.0,
            seed: 1,
            carleman: CarlemanParams::defaults(),
            epsilon: 1e-7,
            lsq_tol: 1e-8,
            max_lsq_iters: 20000,
            solver_method: "lsqr".into(),
            newton_max_iters: 6,
            kappa0: 1e-6,
        }
    }
}

fn config_err(line_no: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line_no}: {msg}"))
}

/// Parses `key = value` lines over the defaults. Unknown keys, repeated keys
/// and malformed values are errors that name the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(config_err(line_no, format!("key `{key}` has no value")));
        }
        if seen.iter().any(|k| k == key) {
            return Err(config_err(line_no, format!("key `{key}` already set")));
        }
        seen.push(key.to_string());

        macro_rules! num {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| {
                    config_err(line_no, format!("key `{key}`: cannot parse `{value}`: {e}"))
                })?
            };
        }
        match key {
            "domain.R" => cfg.domain_r = num!(f64),
            "domain.R1" => cfg.domain_r1 = num!(f64),
            "grid.n1" => cfg.n1 = num!(usize),
            "time.T" => cfg.t_end = num!(f64),
            "time.nt" => cfg.nt = num!(usize),
            "basis.N" => cfg.n_modes = num!(usize),
            "phantom.name" => cfg.phantom = value.to_string(),
            "nonlinearity.name" => cfg.nonlinearity = value.to_string(),
            "nonlinearity.cutoff_B" => cfg.cutoff_b = Some(num!(f64)),
            "noise.delta" => cfg.delta = num!(f64),
            "noise.seed" => cfg.seed = num!(u64),
            "carleman.x0x" => cfg.carleman.x0.0 = num!(f64),
            "carleman.x0y" => cfg.carleman.x0.1 = num!(f64),
            "carleman.b" => cfg.carleman.b = num!(f64),
            "carleman.lambda" => cfg.carleman.lambda = num!(f64),
            "carleman.beta" => cfg.carleman.beta = num!(f64),
            "solver.epsilon" => cfg.epsilon = num!(f64),
            "solver.lsq_tol" => cfg.lsq_tol = num!(f64),
            "solver.max_lsq_iters" => cfg.max_lsq_iters = num!(usize),
            "solver.method" => cfg.solver_method = value.to_string(),
            "newton.max_iters" => cfg.newton_max_iters = num!(usize),
            "newton.kappa0" => cfg.kappa0 = num!(f64),
            _ => return Err(config_err(line_no, format!("unknown key `{key}`"))),
        }
    }
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Canonical serializer: every key, fixed order, shortest round-trip float
/// formatting, so `parse_config(render_config(c)) == c` exactly.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "domain.R = {}", cfg.domain_r);
    let _ = writeln!(s, "domain.R1 = {}", cfg.domain_r1);
    let _ = writeln!(s, "grid.n1 = {}", cfg.n1);
    let _ = writeln!(s, "time.T = {}", cfg.t_end);
    let _ = writeln!(s, "time.nt = {}", cfg.nt);
    let _ = writeln!(s, "basis.N = {}", cfg.n_modes);
    let _ = writeln!(s, "phantom.name = {}", cfg.phantom);
    let _ = writeln!(s, "nonlinearity.name = {}", cfg.nonlinearity);
    if let Some(b) = cfg.cutoff_b {
        let _ = writeln!(s, "nonlinearity.cutoff_B = {b}");
    }
    let _ = writeln!(s, "noise.delta = {}", cfg.delta);
    let _ = writeln!(s, "noise.seed = {}", cfg.seed);
    let _ = writeln!(s, "carleman.x0x = {}", cfg.carleman.x0.0);
    let _ = writeln!(s, "carleman.x0y = {}", cfg.carleman.x0.1);
    let _ = writeln!(s, "carleman.b = {}", cfg.carleman.b);
    let _ = writeln!(s, "carleman.lambda = {}", cfg.carleman.lambda);
    let _ = writeln!(s, "carleman.beta = {}", cfg.carleman.beta);
    let _ = writeln!(s, "solver.epsilon = {}", cfg.epsilon);
    let _ = writeln!(s, "solver.lsq_tol = {}", cfg.lsq_tol);
    let _ = writeln!(s, "solver.max_lsq_iters = {}", cfg.max_lsq_iters);
    let _ = writeln!(s, "solver.method = {}", cfg.solver_method);
    let _ = writeln!(s, "newton.max_iters = {}", cfg.newton_max_iters);
    let _ = writeln!(s, "newton.kappa0 = {}", cfg.kappa0);
    s
}

impl ExperimentConfig {
    /// Cross-field sanity checks that do not need derived objects.
    pub fn check(&self) -> Result<()> {
        if !(self.domain_r > 0.0 && self.domain_r1 > self.domain_r) {
            return Err(Error::Config(format!(
                "domains must satisfy 0 < R < R1, got R = {}, R1 = {}",
                self.domain_r, self.domain_r1
            )));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config(format!("final time must be positive, got {}", self.t_end)));
        }
        if self.n_modes == 0 {
            return Err(Error::Config("basis.N must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("noise.delta must lie in [0, 1), got {}", self.delta)));
        }
        match self.solver_method.as_str() {
            "lsqr" | "dense" => {}
            other => {
                return Err(Error::Config(format!(
                    "solver.method must be `lsqr` or `dense`, got `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn grid1(&self) -> Result<Grid2D> {
        Grid2D::centered(self.domain_r1, self.n1)
    }

    pub fn quadrature(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.t_end, self.nt)
    }

    pub fn phantom_obj(&self) -> Result<Phantom> {
        Phantom::from_name(&self.phantom)
    }

    pub fn nonlinearity_obj(&self) -> Result<Nonlinearity> {
        let base = Nonlinearity::from_name(&self.nonlinearity)?;
        match self.cutoff_b {
            Some(b) => base.with_cutoff(b),
            None => Ok(base),
        }
    }

    pub fn solve_method(&self) -> SolveMethod {
        match self.solver_method.as_str() {
            "dense" => SolveMethod::Dense,
            _ => SolveMethod::Lsqr,
        }
    }

    pub fn newton_settings(&self) -> NewtonSettings {
        NewtonSettings {
            max_iters: self.newton_max_iters,
            kappa0: self.kappa0,
            epsilon: self.epsilon,
            lsq: LeastSquaresSettings {
                method: self.solve_method(),
                tol: self.lsq_tol,
                max_iters: self.max_lsq_iters,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// atomic writes
// ---------------------------------------------------------------------------

/// Writes through a hidden temp file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// trace files
// ---------------------------------------------------------------------------

fn trace_paths(base: &Path) -> (PathBuf, PathBuf) {
    let meta = PathBuf::from(format!("{}.meta", base.display()));
    let bin = PathBuf::from(format!("{}.bin", base.display()));
    (meta, bin)
}

/// Saves traces as `<base>.meta` + `<base>.bin`. The payload is every g0
/// series in boundary-node order, then every g1 series, little-endian f64.
pub fn save_traces(base: &Path, traces: &BoundaryTraces) -> Result<()> {
    let (meta_path, bin_path) = trace_paths(base);
    let mut meta = String::new();
    let _ = writeln!(meta, "format_version = 1");
    let _ = writeln!(meta, "t_end = {}", traces.t_end);
    let _ = writeln!(meta, "nt = {}", traces.nt);
    let _ = writeln!(meta, "grid_n = {}", traces.grid.n);
    let _ = writeln!(meta, "grid_h = {}", traces.grid.h);
    let _ = writeln!(meta, "grid_origin = {}", traces.grid.origin());
    let _ = writeln!(meta, "n_boundary = {}", traces.boundary.len());
    atomic_write(&meta_path, meta.as_bytes())?;

    let samples = traces.nt + 1;
    let mut bytes = Vec::with_capacity(2 * traces.boundary.len() * samples * 8);
    for series in traces.g0.iter().chain(traces.g1.iter()) {
        for v in series {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(&bin_path, &bytes)
}

/// Loads traces saved by [`save_traces`]; the round trip is bit-exact.
pub fn load_traces(base: &Path) -> Result<BoundaryTraces> {
    let (meta_path, bin_path) = trace_paths(base);
    let meta_text = fs::read_to_string(&meta_path)?;
    let mut t_end = None;
    let mut nt = None;
    let mut grid_n = None;
    let mut grid_h = None;
    let mut grid_origin = None;
    let mut n_boundary = None;
    let mut version = None;
    for (idx, raw) in meta_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("{}: line {}: expected `key = value`", meta_path.display(), idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            Error::Format(format!(
                "{}: line {}: cannot parse {what} from `{value}`",
                meta_path.display(),
                idx + 1
            ))
        };
        match key {
            "format_version" => version = Some(value.parse::<u32>().map_err(|_| bad("version"))?),
            "t_end" => t_end = Some(value.parse::<f64>().map_err(|_| bad("t_end"))?),
            "nt" => nt = Some(value.parse::<usize>().map_err(|_| bad("nt"))?),
            "grid_n" => grid_n = Some(value.parse::<usize>().map_err(|_| bad("grid_n"))?),
            "grid_h" => grid_h = Some(value.parse::<f64>().map_err(|_| bad("grid_h"))?),
            "grid_origin" => {
                grid_origin = Some(value.parse::<f64>().map_err(|_| bad("grid_origin"))?)
            }
            "n_boundary" => n_boundary = Some(value.parse::<usize>().map_err(|_| bad("n_boundary"))?),
            other => {
                return Err(Error::Format(format!(
                    "{}: line {}: unknown key `{other}`",
                    meta_path.display(),
                    idx + 1
                )))
            }
        }
    }
    let missing = |what: &str| Error::Format(format!("{}: missing {what}", meta_path.display()));
    let version = version.ok_or_else(|| missing("format_version"))?;
    if version != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported format_version {version}",
            meta_path.display()
        )));
    }
    let t_end = t_end.ok_or_else(|| missing("t_end"))?;
    let nt = nt.ok_or_else(|| missing("nt"))?;
    let grid_n = grid_n.ok_or_else(|| missing("grid_n"))?;
    let grid_h = grid_h.ok_or_else(|| missing("grid_h"))?;
    let grid_origin = grid_origin.ok_or_else(|| missing("grid_origin"))?;
    let n_boundary = n_boundary.ok_or_else(|| missing("n_boundary"))?;

    let grid = Grid2D::from_raw(grid_n, grid_h, grid_origin)?;
    let boundary = BoundaryIndex::of(grid_n);
    if boundary.len() != n_boundary {
        return Err(Error::Format(format!(
            "{}: n_boundary = {n_boundary} does not match grid_n = {grid_n} (expected {})",
            meta_path.display(),
            boundary.len()
        )));
    }

    let bytes = fs::read(&bin_path)?;
    let samples = nt + 1;
    let expected = 2 * n_boundary * samples * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, expected {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut read_block = || -> Vec<Vec<f64>> {
        (0..n_boundary)
            .map(|_| (0..samples).map(|_| values.next().unwrap()).collect())
            .collect()
    };
    let g0 = read_block();
    let g1 = read_block();
    Ok(BoundaryTraces { grid, boundary, t_end, nt, g0, g1 })
}

// ---------------------------------------------------------------------------
// text outputs
// ---------------------------------------------------------------------------

/// `x,y,value` rows over the whole grid, row-major, full f64 precision.
pub fn write_field_csv(path: &Path, grid: &Grid2D, field: &Field) -> Result<()> {
    let mut out = String::with_capacity(grid.node_count() * 48);
    out.push_str("x,y,value\n");
    for i in 0..grid.n {
        for j in 0..grid.n {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                grid.coord(i),
                grid.coord(j),
                field.at(i, j)
            );
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_history_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str("iter,increment_max,j0,j_new,lsq_iterations,lsq_relative_residual,lsq_converged\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            r.iter,
            r.increment_max,
            r.j0,
            r.j_new,
            r.lsq_iterations,
            r.lsq_relative_residual,
            r.lsq_converged
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Deterministic plain-text metrics report.
pub fn render_metrics(phantom_name: &str, metrics: &ReconstructionMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "phantom = {phantom_name}");
    let _ = writeln!(out, "l2_rel_err = {:.16e}", metrics.l2_rel_err);
    for (k, m) in metrics.inclusions.iter().enumerate() {
        let _ = writeln!(
            out,
            "inclusion_{} center_true = ({:.16e}, {:.16e})",
            k + 1,
            m.center_true.0,
            m.center_true.1
        );
        let _ = writeln!(out, "inclusion_{} peak_true = {:.16e}", k + 1, m.peak_true);
        let _ = writeln!(out, "inclusion_{} peak_recon = {:.16e}", k + 1, m.peak_recon);
        let _ = writeln!(out, "inclusion_{} peak_rel_err = {:.16e}", k + 1, m.peak_rel_err);
        match (m.centroid, m.centroid_dist) {
            (Some((cx, cy)), Some(d)) => {
                let _ = writeln!(
                    out,
                    "inclusion_{} centroid = ({:.16e}, {:.16e})",
                    k + 1,
                    cx,
                    cy
                );
                let _ = writeln!(out, "inclusion_{} centroid_dist = {:.16e}", k + 1, d);
            }
            _ => {
                let _ = writeln!(out, "inclusion_{} centroid = none", k + 1);
                let _ = writeln!(out, "inclusion_{} centroid_dist = none", k + 1);
            }
        }
    }
    out
}

pub fn write_metrics(path: &Path, phantom_name: &str, metrics: &ReconstructionMetrics) -> Result<()> {
    atomic_write(path, render_metrics(phantom_name, metrics).as_bytes())
}

/// 8-bit binary PGM of the field, auto-scaled to its value range; the image
/// y axis points down, so larger y coordinates appear in upper rows.
pub fn write_pgm(path: &Path, grid: &Grid2D, field: &Field) -> Result<()> {
    let n = grid.n;
    let lo = field.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in 0..n {
        let j = n - 1 - row;
        for i in 0..n {
            let v = ((field.at(i, j) - lo) / span * 255.0).round().clamp(0.0, 255.0);
            bytes.push(v as u8);
        }
    }
    atomic_write(path, &bytes)
}
