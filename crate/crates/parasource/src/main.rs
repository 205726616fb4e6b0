//! Command-line driver: forward simulation, inversion, basis diagnostics,
//! end-to-end runs, and built-in numerical self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parasource::carleman::{
    assemble_step, solve_step, weight_field, CarlemanParams, LeastSquaresSettings, SolveMethod,
};
use parasource::forward::{apply_noise, run_forward, Nonlinearity, Phantom};
use parasource::grid::Grid2D;
use parasource::io::{
    load_config, load_traces, save_traces, write_field_csv, write_history_csv, write_metrics,
    write_pgm, ExperimentConfig,
};
use parasource::newton::{evaluate_reconstruction, invert, InversionResult};
use parasource::spectral::{truncation_diagnostic, SpectralState};
use parasource::time_basis::{build_basis, stiffness, QuadratureGrid};
use parasource::{Error, Result};

#[derive(Parser)]
#[command(
    name = "parasource",
    version,
    about = "Reconstructs the initial source of a nonlinear parabolic equation from lateral Cauchy boundary data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory artifacts are written to.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads (0 picks the core count). Results are identical for
    /// any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the forward problem, apply the configured noise, save traces.
    Forward {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct the initial source from saved traces.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Trace base path (`.meta`/`.bin` pair, extension optional).
        #[arg(long)]
        traces: PathBuf,
    },
    /// Basis-truncation error of saved traces for several basis sizes.
    BasisDiag {
        /// Trace base path (`.meta`/`.bin` pair, extension optional).
        #[arg(long)]
        traces: PathBuf,
        /// Comma-separated basis sizes, e.g. 10,20,35.
        #[arg(long = "N-list", value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
    },
    /// Forward simulation, noise, and inversion in one run.
    Full {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run built-in numerical self-checks.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                Error::Numerical(_) => 2,
                Error::Io(_) | Error::Format(_) => 3,
            })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Forward { config } => {
            let cfg = load_config(config)?;
            let traces = forward_cmd(&cfg, &cli.out, &say)?;
            save_traces(&cli.out.join("traces"), &traces)?;
            say(format!("wrote {}/traces.meta and traces.bin", cli.out.display()));
            Ok(())
        }
        Command::Invert { config, traces } => {
            let cfg = load_config(config)?;
            let traces = load_traces(&trace_base(traces))?;
            let result = invert_cmd(&cfg, &traces, &say)?;
            write_artifacts(&cfg, &traces.grid, &result, &cli.out, &say)
        }
        Command::Full { config } => {
            let cfg = load_config(config)?;
            let traces = forward_cmd(&cfg, &cli.out, &say)?;
            save_traces(&cli.out.join("traces"), &traces)?;
            let result = invert_cmd(&cfg, &traces, &say)?;
            write_artifacts(&cfg, &traces.grid, &result, &cli.out, &say)
        }
        Command::BasisDiag { traces, n_list } => basis_diag_cmd(traces, n_list, &cli.out, &say),
        Command::Verify => verify_cmd(),
    }
}

/// Accepts `traces`, `traces.bin` or `traces.meta` and returns the base.
fn trace_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("meta") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn forward_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    say: &dyn Fn(String),
) -> Result<parasource::forward::BoundaryTraces> {
    let grid1 = cfg.grid1()?;
    let phantom = cfg.phantom_obj()?;
    let nonlin = cfg.nonlinearity_obj()?;
    say(format!(
        "forward: {0}x{0} grid (h = {1:.6}), nt = {2} (dt = {3:.6e}), phantom {4}, nonlinearity {5}",
        cfg.n1,
        grid1.h,
        cfg.nt,
        cfg.t_end / cfg.nt as f64,
        phantom.name(),
        nonlin.name(),
    ));
    let run = run_forward(&grid1, cfg.domain_r, cfg.t_end, cfg.nt, &phantom, &nonlin, false)?;
    say(format!(
        "traces: {} boundary nodes x {} samples on the {}x{} inversion grid",
        run.traces.boundary.len(),
        cfg.nt + 1,
        run.traces.grid.n,
        run.traces.grid.n,
    ));
    let truth = phantom.sample(&run.restriction.grid);
    write_field_csv(&out.join("true_source.csv"), &run.restriction.grid, &truth)?;
    write_pgm(&out.join("true_source.pgm"), &run.restriction.grid, &truth)?;
    if cfg.delta > 0.0 {
        say(format!("noise: multiplicative, level {} (seed {})", cfg.delta, cfg.seed));
    }
    apply_noise(&run.traces, cfg.delta, cfg.seed)
}

fn invert_cmd(
    cfg: &ExperimentConfig,
    traces: &parasource::forward::BoundaryTraces,
    say: &dyn Fn(String),
) -> Result<InversionResult> {
    let quad = QuadratureGrid::new(traces.t_end, traces.nt)?;
    let basis = build_basis(&quad, cfg.n_modes)?;
    say(format!(
        "basis: N = {}, orthonormality defect {:.2e}",
        cfg.n_modes,
        basis.orthonormality_defect()
    ));
    let nonlin = cfg.nonlinearity_obj()?;
    let settings = cfg.newton_settings();
    let result = invert(traces, &basis, &nonlin, &cfg.carleman, &settings, |rec| {
        say(format!(
            "iter {:2}: |phi|_inf = {:.6e}   J {:.6e} -> {:.6e}   ({} solve: {} iters, rel residual {:.2e})",
            rec.iter,
            rec.increment_max,
            rec.j0,
            rec.j_new,
            if settings.lsq.method == SolveMethod::Dense { "dense" } else { "lsqr" },
            rec.lsq_iterations,
            rec.lsq_relative_residual,
        ));
    })?;
    say(if result.converged {
        format!("converged after {} iterations", result.history.len() - 1)
    } else {
        format!("stopped at the iteration allowance ({})", settings.max_iters)
    });
    Ok(result)
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    grid: &Grid2D,
    result: &InversionResult,
    out: &Path,
    say: &dyn Fn(String),
) -> Result<()> {
    write_field_csv(&out.join("reconstruction.csv"), grid, &result.source)?;
    write_pgm(&out.join("reconstruction.pgm"), grid, &result.source)?;
    write_history_csv(&out.join("history.csv"), &result.history)?;
    let phantom = cfg.phantom_obj()?;
    let metrics = evaluate_reconstruction(&result.source, grid, &phantom);
    write_metrics(&out.join("metrics.txt"), phantom.name(), &metrics)?;
    say(format!("l2_rel_err = {:.4}", metrics.l2_rel_err));
    for (k, m) in metrics.inclusions.iter().enumerate() {
        say(format!(
            "inclusion {}: peak {:.4} of {:.4} (rel err {:.2}%)",
            k + 1,
            m.peak_recon,
            m.peak_true,
            100.0 * m.peak_rel_err,
        ));
    }
    say(format!(
        "wrote {0}/reconstruction.csv, reconstruction.pgm, history.csv, metrics.txt",
        out.display()
    ));
    Ok(())
}

fn basis_diag_cmd(
    traces_path: &Path,
    n_list: &[usize],
    out: &Path,
    say: &dyn Fn(String),
) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::Config("basis-diag needs at least one basis size in --N-list".into()));
    }
    let traces = load_traces(&trace_base(traces_path))?;
    let quad = QuadratureGrid::new(traces.t_end, traces.nt)?;
    let mut summary = String::from("N,max_e,l2\n");
    for &n in n_list {
        let basis = build_basis(&quad, n)?;
        let diag = truncation_diagnostic(&traces, &basis)?;
        let mut csv = String::from("x,t,e\n");
        for (node, x) in diag.xs.iter().enumerate() {
            for (k, e) in diag.e[node].iter().enumerate() {
                use std::fmt::Write as _;
                let _ = writeln!(csv, "{:.16e},{:.16e},{:.16e}", x, quad.nodes[k], e);
            }
        }
        parasource::io::atomic_write(&out.join(format!("basis_diag_N{n}.csv")), csv.as_bytes())?;
        use std::fmt::Write as _;
        let _ = writeln!(summary, "{n},{:.16e},{:.16e}", diag.max_abs, diag.l2);
        say(format!("N = {n}: max e_N = {:.4e}, L2 = {:.4e}", diag.max_abs, diag.l2));
    }
    parasource::io::atomic_write(&out.join("basis_diag_summary.csv"), summary.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn verify_cmd() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, value: f64, tol: f64| {
        let ok = value <= tol;
        println!("{} {name}: {value:.3e} (tolerance {tol:.1e})", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // Time basis oracles at production resolution.
    let quad = QuadratureGrid::new(1.5, 3000)?;
    let weight_sum: f64 = quad.weights.iter().sum();
    check("quadrature weights sum to T", (weight_sum - 1.5).abs(), 1e-12);
    let basis = build_basis(&quad, 35)?;
    let norm = (1.5f64.sinh()).sqrt();
    let mut worst = 0.0f64;
    for (k, t) in quad.nodes.iter().enumerate() {
        let exact = (t - 0.75).exp() / norm;
        worst = worst.max((basis.psi(0)[k] - exact).abs());
    }
    check("first basis function closed form", worst, 1e-10);
    check("orthonormality defect (N = 35)", basis.orthonormality_defect(), 1e-8);
    let s = stiffness(&basis);
    check("stiffness integration-by-parts identity", s.integration_by_parts_defect(&basis), 1e-7);
    check("stiffness s_11 = 1", (s.at(0, 0) - 1.0).abs(), 1e-10);
    // quadrature-limited: 2.4e-7 at nt = 3000, fourth-order in nt
    check(
        "derivative consistency on low modes",
        parasource::time_basis::low_mode_derivative_defect(&basis, 10),
        1e-6,
    );

    // Nonlinearity Jacobians against central differences.
    check("Fisher Jacobian probes", jacobian_probe_error(&Nonlinearity::fisher()), 1e-5);
    check("gradient-norm Jacobian probes", jacobian_probe_error(&Nonlinearity::sqrt_grad()), 1e-5);

    // Pure diffusion against the free-space kernel.
    check("forward solver vs heat kernel", heat_kernel_error()?, 2e-2);

    // Carleman weight against independent arithmetic.
    let grid = Grid2D::centered(1.0, 21)?;
    let w = weight_field(&grid, &CarlemanParams::defaults())?;
    let expect = (80.0 * (7.25_f64 / 25.0).powi(5)).exp();
    check("Carleman weight at the far corner", (w.at(20, 0) - expect).abs(), 1e-12);

    // Iterative and direct linear solvers agree on a small assembled step.
    check("iterative vs direct linear solve", lsqr_dense_gap()?, 1e-8);

    if failures > 0 {
        return Err(Error::Numerical(format!("{failures} self-check(s) failed")));
    }
    println!("all self-checks passed");
    Ok(())
}

fn jacobian_probe_error(nonlin: &Nonlinearity) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let tau = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u: f64 = rng.gen_range(-2.0..2.0);
        let gx: f64 = rng.gen_range(-2.0..2.0);
        let gy: f64 = rng.gen_range(-2.0..2.0);
        let fd_u = (nonlin.value(u + tau, gx, gy) - nonlin.value(u - tau, gx, gy)) / (2.0 * tau);
        let fd_gx = (nonlin.value(u, gx + tau, gy) - nonlin.value(u, gx - tau, gy)) / (2.0 * tau);
        let fd_gy = (nonlin.value(u, gx, gy + tau) - nonlin.value(u, gx, gy - tau)) / (2.0 * tau);
        let an_u = nonlin.d_u(u, gx, gy);
        let (an_gx, an_gy) = nonlin.d_grad(u, gx, gy);
        for (fd, an) in [(fd_u, an_u), (fd_gx, an_gx), (fd_gy, an_gy)] {
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    worst
}

fn heat_kernel_error() -> Result<f64> {
    let g = Grid2D::centered(6.0, 120)?;
    let nt = 600;
    let run = run_forward(&g, 1.0, 1.5, nt, &Phantom::gaussian(), &Nonlinearity::zero(), true)?;
    let og = run.restriction.grid;
    let hist = run.omega_history.as_ref().unwrap();
    let s = parasource::forward::GAUSSIAN_S;
    let mut worst = 0.0f64;
    for (k, field) in hist.iter().enumerate().step_by(60) {
        let t = 1.5 * k as f64 / nt as f64;
        for i in 0..og.n {
            for j in 0..og.n {
                let (x, y) = (og.coord(i), og.coord(j));
                let exact = s / (s + t) * (-(x * x + y * y) / (4.0 * (s + t))).exp();
                worst = worst.max((field.at(i, j) - exact).abs());
            }
        }
    }
    Ok(worst)
}

fn lsqr_dense_gap() -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let grid = Grid2D::centered(1.0, 9)?;
    let quad = QuadratureGrid::new(1.5, 60)?;
    let basis = build_basis(&quad, 2)?;
    let stiff = stiffness(&basis);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut prev = SpectralState::zeros(2, 9);
    for c in &mut prev.comps {
        for v in c.as_mut_slice() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let w = weight_field(&grid, &CarlemanParams::defaults())?;
    let problem =
        assemble_step(&prev, &grid, &basis, &stiff, &Nonlinearity::fisher(), &w, 1e-7)?;
    let (inc_l, _) = solve_step(
        &problem,
        &LeastSquaresSettings { method: SolveMethod::Lsqr, tol: 1e-12, max_iters: 5000 },
    )?;
    let (inc_d, _) = solve_step(
        &problem,
        &LeastSquaresSettings { method: SolveMethod::Dense, tol: 1e-12, max_iters: 1 },
    )?;
    let scale = inc_d.max_abs().max(1e-30);
    let mut gap = 0.0f64;
    for m in 0..2 {
        for (a, b) in inc_l.comps[m].as_slice().iter().zip(inc_d.comps[m].as_slice()) {
            gap = gap.max((a - b).abs() / scale);
        }
    }
    Ok(gap)
}
