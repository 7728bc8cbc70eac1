//! `qwalk`: generate band matrices, run the walk, solve linear systems and
//! verify the simulator against dense oracles.

mod bundle;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use num_complex::Complex64;
use qwalk_core::cks::{ChebyshevPlan, SolverRun};
use qwalk_core::matrixgen::random_unit_vector;
use qwalk_core::oracle::{normalized_solution, TheoryTracker};
use qwalk_core::walk::{qubit_estimate, t_tilde, t_tilde_adjoint, walk_w, WalkContext};
use qwalk_core::{ResourceStats, SparseState};
use serde::Serialize;

use bundle::{out_path, write_csv, write_json, Bundle};

/// Tolerance for the per-step Chebyshev comparison of `walk`.
const WALK_TOL: f64 = 1e-8;
/// Tolerance for the theory comparison of `solve`.
const SOLVE_TOL: f64 = 1e-6;
/// Constant of the `c·N·s³` branch bound.
const BRANCH_BOUND_C: u64 = 4;

#[derive(Parser)]
#[command(name = "qwalk", version, about = "Sparse-state quantum walk and Chebyshev linear solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a band matrix and write image.bin + image.json.
    Gen {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run walk steps and compare against the Chebyshev recurrence.
    Walk {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Number of walk steps.
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Run the Chebyshev-series linear solver.
    Solve {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Cap on solver iterations (default: the whole series).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the property suites and write verify.json.
    Verify {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Clone, Debug)]
pub struct MatrixArgs {
    /// Packed matrix: a directory holding image.json and image.bin, or the
    /// path of image.json. Without it a matrix is generated.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub rows: u64,
    #[arg(long, default_value_t = 1)]
    pub bandwidth: u64,
    #[arg(long = "word-length", default_value_t = 8)]
    pub word_length: u32,
    /// Seeds the generated matrix and the input vector.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw off-diagonal entries from (-1, 1).
    #[arg(long)]
    pub signed: bool,
}

#[derive(Args, Clone, Debug)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OracleMode::On)]
    oracle: OracleMode,
    #[arg(long = "prune-tol", default_value_t = qwalk_core::state::DEFAULT_PRUNE_TOL)]
    prune_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OracleMode {
    On,
    Off,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
pub enum Exit {
    Verification(String),
    Config(String),
    Io(String),
}

impl Exit {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Exit::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            Exit::Verification(_) => 1,
            Exit::Config(_) => 2,
            Exit::Io(_) => 3,
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exit::Verification(m) => write!(f, "verification failed: {m}"),
            Exit::Config(m) => write!(f, "configuration error: {m}"),
            Exit::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<qwalk_core::Error> for Exit {
    fn from(e: qwalk_core::Error) -> Self {
        Exit::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("qwalk: {e}");
        return ExitCode::from(e.code());
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qwalk: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn configure_threads() -> Result<(), Exit> {
    let Ok(v) = std::env::var("QWALK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Exit::Config(format!("QWALK_THREADS={v} is not a number")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Exit::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Exit> {
    match cli.command {
        Command::Gen { matrix, out } => {
            if matrix.matrix.is_some() {
                return Err(Exit::Config("gen does not take --matrix".into()));
            }
            let bundle = Bundle::generate(&matrix)?;
            bundle.save(&out)?;
            println!(
                "N={} s={} kappa={:.6e} -> {}",
                bundle.sidecar.rows,
                bundle.sidecar.s,
                bundle.sidecar.kappa,
                out.display()
            );
            Ok(())
        }
        Command::Walk { matrix, run, steps } => cmd_walk(&matrix, &run, steps),
        Command::Solve {
            matrix,
            run,
            epsilon,
            steps,
        } => cmd_solve(&matrix, &run, epsilon, steps),
        Command::Verify { matrix, run } => verify::cmd_verify(&matrix, &run.out, run.prune_tol),
    }
}

/// Metadata shared by the walk and solve reports.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunMeta {
    command: &'static str,
    row_size: u64,
    word_length: u32,
    kappa: f64,
    s: u64,
    seed: u64,
    prune_tol: f64,
    oracle: bool,
    qubit_count_auto: u64,
    qubit_count_formula: u64,
    max_branches: usize,
    branch_bound: u64,
    nnz: usize,
    avg_step_millis: f64,
    peak_memory_bytes: u64,
    threads: usize,
}

impl RunMeta {
    fn new(command: &'static str, bundle: &Bundle, args: &MatrixArgs, run: &RunArgs, nnz: usize) -> Self {
        let sc = &bundle.sidecar;
        RunMeta {
            command,
            row_size: sc.rows,
            word_length: sc.k_w,
            kappa: sc.kappa,
            s: sc.s,
            seed: args.seed,
            prune_tol: run.prune_tol,
            oracle: run.oracle == OracleMode::On,
            qubit_count_auto: 0,
            qubit_count_formula: qubit_estimate(sc.rows, sc.s, sc.k_w),
            max_branches: 0,
            branch_bound: BRANCH_BOUND_C * sc.rows * sc.s.pow(3),
            nnz,
            avg_step_millis: 0.0,
            peak_memory_bytes: 0,
            threads: threads(),
        }
    }

    fn set_resources(&mut self, r: &ResourceStats) {
        self.qubit_count_auto = r.max_working_qubits;
        self.max_branches = r.max_branches;
        // One u64 per register slot plus a complex amplitude per branch.
        self.peak_memory_bytes = r.max_branches as u64 * (8 * r.max_working_registers as u64 + 16);
    }
}

fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn setup(bundle: &Bundle, prune_tol: f64) -> Result<(SparseState, WalkContext), Exit> {
    let mut template = SparseState::new();
    template.set_prune_tol(prune_tol);
    let ctx = WalkContext::new(&mut template, bundle.sidecar.params(), bundle.image.clone())?;
    Ok((template, ctx))
}

fn complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

#[derive(Serialize)]
struct WalkRow {
    n: usize,
    max_err: Option<f64>,
    branches: usize,
}

#[derive(Serialize)]
struct TimingRow {
    step: usize,
    millis: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct WalkReport {
    #[serde(flatten)]
    meta: RunMeta,
    steps: usize,
    max_err: Option<f64>,
    tolerance: f64,
    branches_after_first_isometry: usize,
    passed: bool,
}

fn cmd_walk(args: &MatrixArgs, run: &RunArgs, steps: usize) -> Result<(), Exit> {
    if steps == 0 {
        return Err(Exit::Config("--steps must be at least 1".into()));
    }
    let bundle = Bundle::from_args(args)?;
    let csc = bundle.csc()?;
    let oracle = run.oracle == OracleMode::On;
    let h = if oracle { Some(bundle.dense_h(&csc)?) } else { None };
    let (template, ctx) = setup(&bundle, run.prune_tol)?;
    let n = csc.rows as usize;
    let b = random_unit_vector(n, args.seed);

    let mut state = template.empty_like();
    ctx.load_input(&mut state, &complex(&b))?;
    t_tilde(&mut state, &ctx)?;
    let after_first = state.branch_count();

    let bvec = DVector::from_column_slice(&b);
    let (mut prev, mut cur) = (DVector::zeros(n), bvec.clone());
    let mut rows = Vec::with_capacity(steps);
    let mut timings = Vec::with_capacity(steps);
    let mut worst: Option<f64> = None;
    let mut stats = state.resources();
    let start = Instant::now();
    for step in 1..=steps {
        let t = Instant::now();
        walk_w(&mut state, &ctx)?;
        timings.push(TimingRow {
            step,
            millis: t.elapsed().as_secs_f64() * 1e3,
        });
        let err = if let Some(h) = &h {
            let next = if step == 1 { h * &cur } else { 2.0 * (h * &cur) - &prev };
            prev = std::mem::replace(&mut cur, next);
            let mut probe = state.clone();
            t_tilde_adjoint(&mut probe, &ctx)?;
            stats.merge(&probe.resources());
            let got = ctx.flag_zero_amplitudes(&probe)?;
            let e = got
                .iter()
                .enumerate()
                .map(|(i, g)| (g - Complex64::new(cur.get(i).copied().unwrap_or(0.0), 0.0)).norm())
                .fold(0.0, f64::max);
            worst = Some(worst.map_or(e, |w: f64| w.max(e)));
            Some(e)
        } else {
            None
        };
        rows.push(WalkRow {
            n: step,
            max_err: err,
            branches: state.branch_count(),
        });
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    stats.merge(&state.resources());

    let mut meta = RunMeta::new("walk", &bundle, args, run, csc.nnz());
    meta.set_resources(&stats);
    meta.avg_step_millis = elapsed / steps as f64;
    let bounds_ok = stats.max_branches as u64 <= meta.branch_bound && after_first >= csc.nnz();
    let passed = bounds_ok && worst.is_none_or(|w| w <= WALK_TOL);
    let report = WalkReport {
        meta,
        steps,
        max_err: worst,
        tolerance: WALK_TOL,
        branches_after_first_isometry: after_first,
        passed,
    };

    bundle::create_dir(&run.out)?;
    write_csv(&out_path(&run.out, "walk.csv"), &rows, &["n", "max_err", "branches"])?;
    write_csv(&out_path(&run.out, "timings.csv"), &timings, &["n", "millis"])?;
    write_json(&out_path(&run.out, "report.json"), &report)?;
    println!(
        "walk: {steps} steps, max_err={}, max_branches={}",
        worst.map_or("n/a".into(), |w| format!("{w:.3e}")),
        stats.max_branches
    );
    if passed {
        Ok(())
    } else {
        Err(Exit::Verification(format!(
            "walk check failed (max_err={worst:?}, max_branches={}, bound={}, after first isometry={after_first}, nnz={})",
            stats.max_branches,
            report.meta.branch_bound,
            csc.nnz()
        )))
    }
}

#[derive(Serialize)]
struct SolveRow {
    j: usize,
    p: f64,
    f: f64,
    p_theory: Option<f64>,
    f_theory: Option<f64>,
    branches: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SolveReport {
    #[serde(flatten)]
    meta: RunMeta,
    epsilon: f64,
    b: u64,
    j0: u64,
    coefficient_count: usize,
    full_horizon_walk_steps: u64,
    walk_steps: u64,
    iterations: usize,
    converged_at: Option<usize>,
    final_p: f64,
    final_f: f64,
    max_theory_deviation: Option<f64>,
    tolerance: f64,
    passed: bool,
}

fn cmd_solve(args: &MatrixArgs, run: &RunArgs, epsilon: f64, steps: Option<usize>) -> Result<(), Exit> {
    let bundle = Bundle::from_args(args)?;
    let csc = bundle.csc()?;
    let h = bundle.dense_h(&csc)?;
    let plan = ChebyshevPlan::new(bundle.sidecar.kappa, epsilon)?;
    let max_steps = steps.unwrap_or(plan.coeffs.len());
    if max_steps == 0 {
        return Err(Exit::Config("--steps must be at least 1".into()));
    }
    let n = csc.rows as usize;
    let b = random_unit_vector(n, args.seed);
    let bvec = DVector::from_column_slice(&b);
    let x = normalized_solution(&h, &bvec)?;
    let (template, ctx) = setup(&bundle, run.prune_tol)?;
    let mut theory = (run.oracle == OracleMode::On).then(|| TheoryTracker::new(h.clone(), bvec, x.clone(), &plan));

    let mut solver = SolverRun::new(&ctx, &template, &b, x.as_slice(), plan.clone())?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut deviation: Option<f64> = None;
    let start = Instant::now();
    while !solver.is_done() && solver.next_j() < max_steps {
        let rec = solver.step(&ctx)?;
        let th = theory.as_mut().and_then(Iterator::next);
        if let Some(t) = th {
            let d = (rec.p - t.p).abs().max((rec.f - t.f).abs());
            deviation = Some(deviation.map_or(d, |w: f64| w.max(d)));
        }
        rows.push(SolveRow {
            j: rec.j,
            p: rec.p,
            f: rec.f,
            p_theory: th.map(|t| t.p),
            f_theory: th.map(|t| t.f),
            branches: rec.branches,
        });
        timings.push(TimingRow {
            step: rec.j,
            millis: rec.millis,
        });
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let last = solver.steps.last().copied().ok_or_else(|| Exit::Config("no solver steps ran".into()))?;
    let mut meta = RunMeta::new("solve", &bundle, args, run, csc.nnz());
    meta.set_resources(&solver.resources());
    meta.avg_step_millis = elapsed / solver.walk_steps.max(1) as f64;
    let passed = deviation.is_none_or(|d| d <= SOLVE_TOL);
    let report = SolveReport {
        meta,
        epsilon,
        b: plan.b,
        j0: plan.j0,
        coefficient_count: plan.coeffs.len(),
        full_horizon_walk_steps: 2 * plan.j0 + 1,
        walk_steps: solver.walk_steps,
        iterations: solver.steps.len(),
        converged_at: solver.converged_at,
        final_p: last.p,
        final_f: last.f,
        max_theory_deviation: deviation,
        tolerance: SOLVE_TOL,
        passed,
    };

    bundle::create_dir(&run.out)?;
    write_csv(
        &out_path(&run.out, "solve.csv"),
        &rows,
        &["j", "p", "f", "p_theory", "f_theory", "branches"],
    )?;
    write_csv(&out_path(&run.out, "timings.csv"), &timings, &["j", "millis"])?;
    write_json(&out_path(&run.out, "report.json"), &report)?;
    println!(
        "solve: kappa={:.4e} j0={} iterations={} converged_at={:?} p={:.6} F={:.6}",
        bundle.sidecar.kappa,
        plan.j0,
        solver.steps.len(),
        solver.converged_at,
        last.p,
        last.f
    );
    if passed {
        Ok(())
    } else {
        Err(Exit::Verification(format!(
            "theory deviation {deviation:?} exceeds {SOLVE_TOL}"
        )))
    }
}
