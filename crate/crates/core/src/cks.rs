//! Chebyshev-series linear solver driven by the walk.
//!
//! `A⁻¹` is approximated on the spectrum of `H = A/s` by
//! `f(x) = (1 - (1 - x²)^b) / x = Σ_j a_j 𝒯_{2j+1}(x)`. The walk supplies
//! the odd Chebyshev terms: the flag-zero part of `τ_j = T̃† W^{2j+1} T̃|b̃⟩` is
//! `𝒯_{2j+1}(H) b`, and the solver accumulates `Σ a_j τ_j`.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::state::{ResourceStats, SparseState};
use crate::walk::{t_tilde, t_tilde_adjoint, walk_w, WalkContext};

/// Consecutive quiet steps before a run counts as converged.
pub const STABLE_STEPS: usize = 10;
/// Change in `p` and `F` below which a step counts as quiet.
pub const STABLE_DELTA: f64 = 1e-9;

/// Degree `b`, truncation `j0` and coefficients `a_0..` of the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevPlan {
    pub kappa: f64,
    pub epsilon: f64,
    pub b: u64,
    pub j0: u64,
    pub coeffs: Vec<f64>,
}

impl ChebyshevPlan {
    /// `b = ⌈κ² ln(κ/ε)⌉`, `j0 = ⌈√(b ln(4b/ε))⌉`.
    pub fn new(kappa: f64, epsilon: f64) -> Result<Self> {
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be >= 1, got {kappa}")));
        }
        check_epsilon(epsilon)?;
        let b = (kappa * kappa * (kappa / epsilon).ln()).ceil().max(1.0);
        let mut plan = Self::with_b(b as u64, epsilon)?;
        plan.kappa = kappa;
        Ok(plan)
    }

    /// Plan for a given degree. Coefficients vanish beyond `b - 1`, so
    /// `min(j0, b - 1) + 1` of them are kept.
    pub fn with_b(b: u64, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if b == 0 {
            return Err(Error::InvalidParameter("b must be positive".into()));
        }
        let bf = b as f64;
        let j0 = (bf * (4.0 * bf / epsilon).ln()).sqrt().ceil() as u64;
        let count = j0.min(b - 1) + 1;
        let tails = binomial_upper_tails(b, count);
        let coeffs = (0..count as usize)
            .map(|j| {
                let sign = if j % 2 == 0 { 4.0 } else { -4.0 };
                sign * tails[j]
            })
            .collect();
        Ok(ChebyshevPlan {
            kappa: f64::NAN,
            epsilon,
            b,
            j0,
            coeffs,
        })
    }

    /// Walk steps needed to use every coefficient: `2 (len - 1) + 1`.
    pub fn walk_steps(&self) -> u64 {
        2 * (self.coeffs.len() as u64 - 1) + 1
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("epsilon must be in (0, 1), got {epsilon}")))
    }
}

/// `P[X >= b + j + 1]` for `X ~ Bin(2b, 1/2)` and `j < count`.
fn binomial_upper_tails(b: u64, count: u64) -> Vec<f64> {
    let n = 2 * b;
    let nf = n as f64;
    // pmf(k) for k = b+1 ..= 2b by the ratio recurrence from pmf(b+1).
    let k0 = b + 1;
    let mut p = if n <= 1000 {
        // 2^-n is still a normal number; walking up from pmf(0) is more
        // accurate than the log-gamma route.
        (0..k0).fold((-nf).exp2(), |p, k| p * (n - k) as f64 / (k + 1) as f64)
    } else {
        (ln_gamma(nf + 1.0) - ln_gamma(k0 as f64 + 1.0) - ln_gamma((n - k0) as f64 + 1.0) - nf * 2f64.ln()).exp()
    };
    let mut pmf = Vec::with_capacity(b as usize);
    for k in k0..=n {
        if p == 0.0 {
            break;
        }
        pmf.push(p);
        p *= (n - k) as f64 / (k + 1) as f64;
    }
    let mut tails = vec![0.0; count as usize];
    let mut acc = 0.0;
    for (i, &v) in pmf.iter().enumerate().rev() {
        acc += v;
        if i < tails.len() {
            tails[i] = acc;
        }
    }
    tails
}

/// Fraction of the squared norm of `state` on the flag-zero subspace.
pub fn success_rate(ctx: &WalkContext, state: &SparseState) -> Result<f64> {
    let total = state.norm();
    if total <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(ctx.flag_zero_mass(state)? / total)
}

/// `|⟨x|ψ⟩|²` for the renormalized flag-zero part `ψ` of `state`.
pub fn fidelity(ctx: &WalkContext, state: &SparseState, target: &[f64]) -> Result<f64> {
    let psi = ctx.flag_zero_amplitudes(state)?;
    let mass: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    if mass <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    let overlap: Complex64 = target.iter().zip(&psi).map(|(&x, &a)| a * x).sum();
    let tnorm: f64 = target.iter().map(|x| x * x).sum();
    Ok(overlap.norm_sqr() / (mass * tnorm))
}

/// `τ ← T̃† W² T̃ τ`.
pub fn tau_step(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    t_tilde(state, ctx)?;
    walk_w(state, ctx)?;
    walk_w(state, ctx)?;
    t_tilde_adjoint(state, ctx)
}

/// One row of the solver trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub j: usize,
    pub p: f64,
    pub f: f64,
    /// Branches of the accumulated state.
    pub branches: usize,
    /// Largest branch count seen in any state of the run so far.
    pub max_branches: usize,
    pub millis: f64,
}

/// State of a solver run.
///
/// Rather than applying `T̃† W² T̃` to `τ_{j-1}`, the run keeps
/// `W^{2j+1} T̃|b̃⟩` and applies `T̃†` to a copy; the two are equal and this
/// saves two isometries per step.
pub struct SolverRun {
    pub plan: ChebyshevPlan,
    walker: SparseState,
    /// Most recent `τ_j`.
    pub tau: SparseState,
    /// `Σ_{k<=j} a_k τ_k`.
    pub acc: SparseState,
    pub steps: Vec<StepRecord>,
    pub converged_at: Option<usize>,
    pub walk_steps: u64,
    target: Vec<f64>,
    quiet: usize,
    stats: ResourceStats,
}

impl SolverRun {
    /// `template` must hold exactly the walk registers of `ctx`; `b` is the
    /// unit input and `target` the normalized classical solution.
    pub fn new(ctx: &WalkContext, template: &SparseState, b: &[f64], target: &[f64], plan: ChebyshevPlan) -> Result<Self> {
        let mut walker = template.empty_like();
        let amps: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        ctx.load_input(&mut walker, &amps)?;
        if (walker.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("input vector is not normalized".into()));
        }
        t_tilde(&mut walker, ctx)?;
        Ok(SolverRun {
            plan,
            tau: template.empty_like(),
            acc: template.empty_like(),
            walker,
            steps: Vec::new(),
            converged_at: None,
            walk_steps: 0,
            target: target.to_vec(),
            quiet: 0,
            stats: ResourceStats::default(),
        })
    }

    pub fn next_j(&self) -> usize {
        self.steps.len()
    }

    pub fn is_done(&self) -> bool {
        self.converged_at.is_some() || self.next_j() >= self.plan.coeffs.len()
    }

    /// Peak resources over every state the run has used.
    pub fn resources(&self) -> ResourceStats {
        let mut s = self.stats;
        s.merge(&self.walker.resources());
        s.merge(&self.tau.resources());
        s.merge(&self.acc.resources());
        s
    }

    /// Computes `τ_j`, accumulates it and records `(p_j, F_j)`.
    pub fn step(&mut self, ctx: &WalkContext) -> Result<StepRecord> {
        let j = self.next_j();
        let a = *self
            .plan
            .coeffs
            .get(j)
            .ok_or_else(|| Error::InvalidParameter(format!("no coefficient for step {j}")))?;
        let start = Instant::now();
        let walks = if j == 0 { 1 } else { 2 };
        for _ in 0..walks {
            walk_w(&mut self.walker, ctx)?;
        }
        self.walk_steps += walks;
        self.stats.merge(&self.tau.resources());
        self.tau = self.walker.clone();
        t_tilde_adjoint(&mut self.tau, ctx)?;
        self.acc.add_scaled(&mut self.tau, Complex64::new(a, 0.0))?;
        let p = success_rate(ctx, &self.acc)?;
        let f = fidelity(ctx, &self.acc, &self.target)?;
        let rec = StepRecord {
            j,
            p,
            f,
            branches: self.acc.branch_count(),
            max_branches: self.resources().max_branches,
            millis: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(prev) = self.steps.last() {
            if (p - prev.p).abs() < STABLE_DELTA && (f - prev.f).abs() < STABLE_DELTA {
                self.quiet += 1;
            } else {
                self.quiet = 0;
            }
            if self.quiet >= STABLE_STEPS {
                self.converged_at = Some(j - STABLE_STEPS);
            }
        }
        self.steps.push(rec);
        Ok(rec)
    }
}

/// Runs the solver until convergence, `max_steps` steps, or the end of the
/// plan, whichever comes first.
pub fn cks_solve(
    ctx: &WalkContext,
    template: &SparseState,
    b: &[f64],
    target: &[f64],
    plan: ChebyshevPlan,
    max_steps: usize,
) -> Result<SolverRun> {
    let mut run = SolverRun::new(ctx, template, b, target, plan)?;
    while !run.is_done() && run.next_j() < max_steps {
        run.step(ctx)?;
    }
    Ok(run)
}
