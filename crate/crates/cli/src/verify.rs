//! `qwalk verify`: property suites run against one matrix plus a few
//! synthetic cases. Every suite reports pass/fail; any failure exits 1.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use qwalk_core::cks::ChebyshevPlan;
use qwalk_core::matrixgen::{random_unit_vector, CscMatrixImage};
use qwalk_core::oracle::cheb_apply;
use qwalk_core::qbs::{classical_binary_search, qbs, QbsContext};
use qwalk_core::walk::{block_column, os_prime, os_prime_adjoint, t_tilde, t_tilde_adjoint, walk_w, WalkContext};
use qwalk_core::{QramImage, SparseState, ValueKind};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{create_dir, out_path, write_json, Bundle, DENSE_LIMIT};
use crate::{Exit, MatrixArgs};

const CHEB_STEPS: usize = 20;
const CHEB_TOL: f64 = 1e-8;
const BLOCK_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-10;
/// Synthetic windows per sparsity in the exhaustive search suite.
const QBS_WINDOWS: usize = 20;
const QBS_MAX_S: u64 = 64;
/// Row limit for suites that enumerate every basis input.
const ENUM_LIMIT: u64 = 256;

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Suite {
    name: &'static str,
    passed: bool,
    skipped: bool,
    cases: usize,
    max_err: Option<f64>,
    tolerance: Option<f64>,
    detail: String,
    millis: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyReport {
    row_size: u64,
    s: u64,
    word_length: u32,
    seed: u64,
    passed: bool,
    suites: Vec<Suite>,
}

struct Outcome {
    cases: usize,
    max_err: Option<f64>,
    tolerance: Option<f64>,
    failure: Option<String>,
}

impl Outcome {
    fn exact(cases: usize, failure: Option<String>) -> Self {
        Outcome {
            cases,
            max_err: None,
            tolerance: None,
            failure,
        }
    }

    fn within(cases: usize, err: f64, tol: f64) -> Self {
        Outcome {
            cases,
            max_err: Some(err),
            tolerance: Some(tol),
            failure: (err.is_nan() || err > tol).then(|| format!("max error {err:.3e} exceeds {tol:.0e}")),
        }
    }
}

fn run_suite(name: &'static str, f: impl FnOnce() -> Result<Outcome, Exit>) -> Result<Suite, Exit> {
    let t = Instant::now();
    let (passed, o) = match f() {
        Ok(o) => (o.failure.is_none(), o),
        // Core errors inside a suite are findings, not configuration problems.
        Err(Exit::Config(m)) => (false, Outcome::exact(0, Some(m))),
        Err(e) => return Err(e),
    };
    Ok(Suite {
        name,
        passed,
        skipped: false,
        cases: o.cases,
        max_err: o.max_err,
        tolerance: o.tolerance,
        detail: o.failure.unwrap_or_default(),
        millis: t.elapsed().as_secs_f64() * 1e3,
    })
}

fn skipped(name: &'static str, why: &str) -> Suite {
    Suite {
        name,
        passed: true,
        skipped: true,
        cases: 0,
        max_err: None,
        tolerance: None,
        detail: why.to_string(),
        millis: 0.0,
    }
}

pub fn cmd_verify(args: &MatrixArgs, out: &Path, prune_tol: f64) -> Result<(), Exit> {
    let bundle = Bundle::from_args(args)?;
    let sc = &bundle.sidecar;
    let mut suites = Vec::new();

    suites.push(run_suite("qbsExhaustive", || qbs_exhaustive(args.seed))?);
    suites.push(run_suite("planArithmetic", plan_arithmetic)?);

    let csc = match CscMatrixImage::unpack(&bundle.image, &sc.params()) {
        Ok(c) => Some(c),
        Err(e) => {
            suites.push(Suite {
                name: "imageLayout",
                passed: false,
                skipped: false,
                cases: 1,
                max_err: None,
                tolerance: None,
                detail: e.to_string(),
                millis: 0.0,
            });
            None
        }
    };
    // Runs the search over every stored window whether or not the layout
    // check passed, so a corrupted window is reported by both.
    suites.push(run_suite("qbsImageWindows", || qbs_image_windows(&bundle))?);

    if let Some(csc) = &csc {
        suites.push(run_suite("imageLayout", || Ok(Outcome::exact(1, None)))?);
        let mut template = SparseState::new();
        template.set_prune_tol(prune_tol);
        let ctx = WalkContext::new(&mut template, sc.params(), bundle.image.clone())?;
        let b = random_unit_vector(csc.rows as usize, args.seed);

        if csc.rows <= ENUM_LIMIT {
            suites.push(run_suite("osPrimeBijection", || os_bijection(&ctx, &template, csc))?);
        } else {
            suites.push(skipped("osPrimeBijection", "N above enumeration limit"));
        }
        suites.push(run_suite("unitarity", || unitarity(&ctx, &template, &b))?);
        if csc.rows <= DENSE_LIMIT {
            let h = bundle.dense_h(csc)?;
            if csc.rows <= 64 {
                suites.push(run_suite("blockEncoding", || block_encoding(&ctx, &template, &h))?);
            } else {
                suites.push(skipped("blockEncoding", "N above 64"));
            }
            suites.push(run_suite("chebyshev", || chebyshev(&ctx, &template, &h, &b))?);
        } else {
            suites.push(skipped("blockEncoding", "N above dense limit"));
            suites.push(skipped("chebyshev", "N above dense limit"));
        }
    }

    let passed = suites.iter().all(|s| s.passed);
    for s in &suites {
        let tag = match (s.skipped, s.passed) {
            (true, _) => "SKIP",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {} ({} cases) {}", s.name, s.cases, s.detail);
    }
    let report = VerifyReport {
        row_size: sc.rows,
        s: sc.s,
        word_length: sc.k_w,
        seed: args.seed,
        passed,
        suites,
    };
    create_dir(out)?;
    write_json(&out_path(out, "verify.json"), &report)?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<_> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
        Err(Exit::Verification(failed.join(", ")))
    }
}

/// Loads `(offset, target, 0)` for every target, runs the search twice and
/// checks the first result against the classical search and the second
/// against the input.
fn search_windows(image: &QramImage, windows: &[(u64, Vec<u64>)], value_width: u32, s: u64) -> Result<Outcome, Exit> {
    let mut st = SparseState::new();
    let offset = st.alloc(image.address_width(), ValueKind::Unsigned, "offset")?;
    let target = st.alloc(value_width, ValueKind::Unsigned, "target")?;
    let output = st.alloc(value_width.max(1), ValueKind::Unsigned, "output")?;
    let targets = 1u64 << value_width;
    let amp = Complex64::new(1.0 / ((windows.len() as u64 * targets) as f64).sqrt(), 0.0);
    let branches: Vec<_> = windows
        .iter()
        .flat_map(|(off, _)| (0..targets).map(move |t| (vec![*off, t, 0], amp)))
        .collect();
    st.load_branches(branches)?;
    let before = st.clone().branches();
    let (regs, depth) = (st.register_count(), st.stack_depth());

    let ctx = QbsContext::new(offset, target, output, s);
    qbs(&mut st, image, &ctx)?;
    let cases = st.branch_count();
    for (vals, _) in st.branches() {
        let window = &windows.iter().find(|(o, _)| *o == vals[0]).expect("loaded offset").1;
        let want = classical_binary_search(window, vals[1]).0 as u64;
        if vals[2] != want {
            return Ok(Outcome::exact(
                cases,
                Some(format!("offset {} target {}: got {} want {want}", vals[0], vals[1], vals[2])),
            ));
        }
    }
    qbs(&mut st, image, &ctx)?;
    if st.branches() != before {
        return Ok(Outcome::exact(cases, Some("second application did not restore the input".into())));
    }
    if st.register_count() != regs || st.stack_depth() != depth {
        return Ok(Outcome::exact(cases, Some("ancillae not released".into())));
    }
    Ok(Outcome::exact(cases, None))
}

fn qbs_exhaustive(seed: u64) -> Result<Outcome, Exit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    let mut s = 1;
    while s <= QBS_MAX_S {
        let width = s.trailing_zeros() + 2;
        let mut words = Vec::new();
        let mut windows = Vec::new();
        for _ in 0..QBS_WINDOWS {
            let mut w: Vec<u64> = sample(&mut rng, 1 << width, s as usize)
                .into_iter()
                .map(|x| x as u64)
                .collect();
            w.sort_unstable();
            windows.push((words.len() as u64, w.clone()));
            words.extend(w);
        }
        let aw = 64 - (words.len() as u64).leading_zeros();
        let image = QramImage::new(words, aw, width)?;
        let o = search_windows(&image, &windows, width, s)?;
        cases += o.cases;
        if let Some(f) = o.failure {
            return Ok(Outcome::exact(cases, Some(format!("s={s}: {f}"))));
        }
        s *= 2;
    }
    Ok(Outcome::exact(cases, None))
}

fn qbs_image_windows(bundle: &Bundle) -> Result<Outcome, Exit> {
    let sc = &bundle.sidecar;
    let s = sc.s;
    let windows: Vec<(u64, Vec<u64>)> = (0..sc.rows)
        .map(|j| {
            let off = sc.sparsity_offset + j * s;
            (off, (off..off + s).map(|a| bundle.image.read(a)).collect())
        })
        .collect();
    if let Some((off, _)) = windows.iter().find(|(_, w)| w.windows(2).any(|p| p[0] >= p[1])) {
        return Ok(Outcome::exact(windows.len(), Some(format!("window at {off} is not sorted"))));
    }
    if sc.rows > ENUM_LIMIT {
        return Ok(Outcome::exact(windows.len(), None));
    }
    search_windows(&bundle.image, &windows, sc.n, s)
}

/// On every basis state `(j < N, k = l, k_c = z)` with `l, z < 2^n`: the map
/// must permute `(k, k_c)`, send `(l < s, z = 0)` to `(k_{j,l}, 0)`, and be
/// undone by its adjoint.
fn os_bijection(ctx: &WalkContext, template: &SparseState, csc: &CscMatrixImage) -> Result<Outcome, Exit> {
    let r = ctx.regs;
    let (n, s) = (csc.rows, csc.sparsity);
    let zs = 1u64 << ctx.params.index_width();
    let mut st = template.empty_like();
    let stride = st.register_count();
    let slot = |reg| template.registers().position(|x| x == reg).expect("walk register");
    let (js, ks, kcs) = (slot(r.j), slot(r.k), slot(r.k_c));
    let mut branches = Vec::new();
    let mut idx = 0u64;
    for j in 0..n {
        for l in 0..zs {
            for z in 0..zs {
                let mut v = vec![0u64; stride];
                v[js] = j;
                v[ks] = l;
                v[kcs] = z;
                // Distinct amplitudes so that a collision cannot cancel unnoticed.
                idx += 1;
                branches.push((v, Complex64::new(idx as f64, 0.0)));
            }
        }
    }
    let total = branches.len();
    st.load_branches(branches)?;
    let before = st.clone().branches();

    os_prime(&mut st, ctx)?;
    if st.branch_count() != total {
        return Ok(Outcome::exact(total, Some(format!("{} of {total} images distinct", st.branch_count()))));
    }
    for (vals, amp) in st.branches() {
        let i = amp.re as u64 - 1;
        let (j, l, z) = (i / (zs * zs), (i / zs) % zs, i % zs);
        if z == 0 && l < s {
            let col = csc.col_indices[(j * s + l) as usize];
            if vals[ks] != col || vals[kcs] != 0 {
                return Ok(Outcome::exact(
                    total,
                    Some(format!("row {j} slot {l}: got (k={}, k_c={}), want ({col}, 0)", vals[ks], vals[kcs])),
                ));
            }
        }
    }
    os_prime_adjoint(&mut st, ctx)?;
    if st.branches() != before {
        return Ok(Outcome::exact(total, Some("adjoint did not restore the input".into())));
    }
    Ok(Outcome::exact(total, None))
}

fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn unitarity(ctx: &WalkContext, template: &SparseState, b: &[f64]) -> Result<Outcome, Exit> {
    let mut st = template.empty_like();
    ctx.load_input(&mut st, &to_complex(b))?;
    let before = st.clone().branches();
    let (regs, depth) = (st.register_count(), st.stack_depth());
    t_tilde(&mut st, ctx)?;
    let mut err = (st.norm() - 1.0).abs();
    for _ in 0..CHEB_STEPS {
        walk_w(&mut st, ctx)?;
        err = err.max((st.norm() - 1.0).abs());
    }
    if st.register_count() != regs || st.stack_depth() != depth {
        return Ok(Outcome::exact(CHEB_STEPS, Some("registers not released".into())));
    }
    // T̃† T̃ on a fresh copy returns the input.
    let mut round = template.empty_like();
    ctx.load_input(&mut round, &to_complex(b))?;
    t_tilde(&mut round, ctx)?;
    t_tilde_adjoint(&mut round, ctx)?;
    let got = round.branches();
    let lookup = |vals: &[u64]| -> Complex64 {
        got.iter()
            .find(|(v, _)| v.as_slice() == vals)
            .map_or(Complex64::new(0.0, 0.0), |(_, a)| *a)
    };
    for (vals, amp) in &before {
        err = err.max((lookup(vals) - amp).norm());
    }
    let stray: f64 = got
        .iter()
        .filter(|(v, _)| !before.iter().any(|(w, _)| w == v))
        .map(|(_, a)| a.norm())
        .fold(0.0, f64::max);
    Ok(Outcome::within(CHEB_STEPS + 1, err.max(stray), NORM_TOL))
}

fn block_encoding(ctx: &WalkContext, template: &SparseState, h: &nalgebra::DMatrix<f64>) -> Result<Outcome, Exit> {
    let n = h.nrows();
    let mut err: f64 = 0.0;
    for col in 0..n {
        let got = block_column(ctx, template, col as u64)?;
        for (row, g) in got.iter().enumerate() {
            let want = if row < n { h[(row, col)] } else { 0.0 };
            err = err.max((g - Complex64::new(want, 0.0)).norm());
        }
    }
    Ok(Outcome::within(n, err, BLOCK_TOL))
}

fn chebyshev(ctx: &WalkContext, template: &SparseState, h: &nalgebra::DMatrix<f64>, b: &[f64]) -> Result<Outcome, Exit> {
    let want = cheb_apply(h, &DVector::from_column_slice(b), CHEB_STEPS);
    let mut st = template.empty_like();
    ctx.load_input(&mut st, &to_complex(b))?;
    t_tilde(&mut st, ctx)?;
    let mut err: f64 = 0.0;
    for w in want.iter().skip(1) {
        walk_w(&mut st, ctx)?;
        let mut probe = st.clone();
        t_tilde_adjoint(&mut probe, ctx)?;
        let got = ctx.flag_zero_amplitudes(&probe)?;
        for (i, g) in got.iter().enumerate() {
            let x = w.get(i).copied().unwrap_or(0.0);
            err = err.max((g - Complex64::new(x, 0.0)).norm());
        }
    }
    Ok(Outcome::within(CHEB_STEPS, err, CHEB_TOL))
}

/// Exact `4·P[X ≥ m]` for `X ~ Bin(2b, 1/2)` from integer binomials.
fn exact_tail(b: u64, m: u64) -> f64 {
    let n = 2 * b;
    let mut c: u128 = 1;
    let mut tail: u128 = 0;
    for k in 0..=n {
        if k > 0 {
            c = c * u128::from(n - k + 1) / u128::from(k);
        }
        if k >= m {
            tail += c;
        }
    }
    4.0 * tail as f64 / (1u128 << n) as f64
}

fn plan_arithmetic() -> Result<Outcome, Exit> {
    let mut cases = 0;
    let mut err: f64 = 0.0;
    for b in 1..=30u64 {
        let plan = ChebyshevPlan::with_b(b, 1e-3)?;
        for (j, &a) in plan.coeffs.iter().enumerate() {
            let want = exact_tail(b, b + j as u64 + 1) * if j % 2 == 0 { 1.0 } else { -1.0 };
            err = err.max((a - want).abs() / want.abs().max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    for kappa in [10.0, 100.0] {
        for eps in [1e-2, 1e-3] {
            let plan = ChebyshevPlan::new(kappa, eps)?;
            let sum: f64 = plan.coeffs.iter().sum();
            cases += 1;
            if (sum - 1.0).abs() > eps {
                return Ok(Outcome::exact(
                    cases,
                    Some(format!("kappa={kappa} eps={eps}: coefficient sum {sum}")),
                ));
            }
        }
    }
    Ok(Outcome::within(cases, err, 1e-12))
}
