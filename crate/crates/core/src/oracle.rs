//! Dense classical references for the simulated quantities.

use nalgebra::{DMatrix, DVector};

use crate::cks::ChebyshevPlan;
use crate::error::{Error, Result};

/// `[t_0, ..., t_{n_max}]` with `t_0 = b`, `t_1 = Hb`, `t_{n+1} = 2H t_n - t_{n-1}`.
pub fn cheb_apply(h: &DMatrix<f64>, b: &DVector<f64>, n_max: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(b.clone());
    if n_max >= 1 {
        out.push(h * b);
    }
    for n in 1..n_max {
        let next = 2.0 * (h * &out[n]) - &out[n - 1];
        out.push(next);
    }
    out
}

/// Solves `Ax = b` by LU with partial pivoting.
pub fn lin_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let smallest = u.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if smallest <= 1e-14 * scale.max(1.0) {
        return Err(Error::Singular(smallest));
    }
    lu.solve(b).ok_or(Error::Singular(smallest))
}

/// `min |λ|` over the eigenvalues of a symmetric matrix.
pub fn min_abs_eigenvalue(h: &DMatrix<f64>) -> f64 {
    h.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// `Σ_{k<=j} a_k 𝒯_{2k+1}(H) b`.
pub fn f_apply(h: &DMatrix<f64>, b: &DVector<f64>, plan: &ChebyshevPlan, j: usize) -> DVector<f64> {
    let j = j.min(plan.coeffs.len() - 1);
    let t = cheb_apply(h, b, 2 * j + 1);
    (0..=j).fold(DVector::zeros(b.len()), |acc, k| acc + plan.coeffs[k] * &t[2 * k + 1])
}

/// `x / ‖x‖` for `x = A⁻¹ b`.
pub fn normalized_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = lin_solve(a, b)?;
    let norm = x.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(x / norm)
}

/// Expected success rate and fidelity after accumulating step `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryPoint {
    pub j: usize,
    pub p: f64,
    pub f: f64,
}

/// Streams the expected `(p_j, F_j)` of the solver.
///
/// The flag-zero part of the accumulated state is `Σ a_k 𝒯_{2k+1}(H) b`. Its
/// total squared norm is `Σ_{k,m} a_k a_m ⟨b|𝒯_{2|k-m|}(H)|b⟩`, since the
/// overlap of two walk states only depends on the difference of their step
/// counts.
pub struct TheoryTracker {
    h: DMatrix<f64>,
    b: DVector<f64>,
    x: DVector<f64>,
    coeffs: Vec<f64>,
    prev: DVector<f64>,
    cur: DVector<f64>,
    n: usize,
    moments: Vec<f64>,
    acc: DVector<f64>,
    total: f64,
    j: usize,
}

impl TheoryTracker {
    /// `h = A/s`, `b` the unit input, `x` the normalized solution.
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, x: DVector<f64>, plan: &ChebyshevPlan) -> Self {
        let n = b.len();
        TheoryTracker {
            cur: b.clone(),
            prev: DVector::zeros(n),
            moments: vec![b.dot(&b)],
            acc: DVector::zeros(n),
            h,
            b,
            x,
            coeffs: plan.coeffs.clone(),
            n: 0,
            total: 0.0,
            j: 0,
        }
    }

    fn advance_to(&mut self, target: usize) {
        while self.n < target {
            let next = if self.n == 0 {
                &self.h * &self.cur
            } else {
                2.0 * (&self.h * &self.cur) - &self.prev
            };
            self.prev = std::mem::replace(&mut self.cur, next);
            self.n += 1;
            self.moments.push(self.b.dot(&self.cur));
        }
    }

    /// Current flag-zero vector `Σ_{k<j} a_k 𝒯_{2k+1}(H) b`.
    pub fn flag_zero_vector(&self) -> &DVector<f64> {
        &self.acc
    }
}

impl Iterator for TheoryTracker {
    type Item = TheoryPoint;

    fn next(&mut self) -> Option<TheoryPoint> {
        let j = self.j;
        let a = *self.coeffs.get(j)?;
        self.advance_to(2 * j + 1);
        self.acc.axpy(a, &self.cur, 1.0);
        let cross: f64 = (0..j).map(|m| self.coeffs[m] * self.moments[2 * (j - m)]).sum();
        self.total += a * a * self.moments[0] + 2.0 * a * cross;
        let mass = self.acc.norm_squared();
        let p = if self.total > 0.0 { mass / self.total } else { 0.0 };
        let f = if mass > 0.0 { self.x.dot(&self.acc).powi(2) / mass } else { 0.0 };
        self.j += 1;
        Some(TheoryPoint { j, p, f })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn chebyshev_first_terms() {
        let h = sym(4, 1) / 4.0;
        let b = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5]);
        let t = cheb_apply(&h, &b, 2);
        assert_eq!(t[0], b);
        assert_eq!(t[1], &h * &b);
        assert!((&t[2] - (2.0 * (&h * (&h * &b)) - &b)).amax() < 1e-15);
    }

    #[test]
    fn scalar_chebyshev_is_cosine() {
        for c in [-1.0, -0.7, 0.0, 0.3, 0.99, 1.0] {
            let h = DMatrix::from_element(1, 1, c);
            let t = cheb_apply(&h, &DVector::from_element(1, 1.0), 40);
            for (n, v) in t.iter().enumerate() {
                assert!((v[0] - (n as f64 * f64::acos(c)).cos()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lin_solve_examples() {
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(lin_solve(&DMatrix::identity(3, 3), &b).unwrap(), b);
        assert!((lin_solve(&(DMatrix::identity(3, 3) * 2.0), &b).unwrap() - &b / 2.0).amax() < 1e-15);
        let a = sym(8, 3) + DMatrix::identity(8, 8) * 3.0;
        let b = DVector::from_fn(8, |i, _| i as f64 - 3.5);
        let x = lin_solve(&a, &b).unwrap();
        assert!((&a * x - &b).amax() <= 1e-10 * b.amax());
        assert!(lin_solve(&DMatrix::zeros(3, 3), &b.rows(0, 3).into()).is_err());
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(min_abs_eigenvalue(&DMatrix::identity(3, 3)), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.25]));
        assert!((min_abs_eigenvalue(&d) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn f_apply_scalar_closed_form() {
        let plan = ChebyshevPlan::with_b(5, 1e-3).unwrap();
        let lambda: f64 = 0.6;
        let h = DMatrix::identity(2, 2) * lambda;
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let got = f_apply(&h, &e1, &plan, plan.coeffs.len() - 1);
        let want = (1.0 - (1.0 - lambda * lambda).powi(5)) / lambda;
        assert!((got[0] - want).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn f_apply_b1_is_h() {
        let plan = ChebyshevPlan::with_b(1, 1e-3).unwrap();
        let h = sym(4, 9) / 4.0;
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!((f_apply(&h, &b, &plan, 0) - &h * &b).amax() < 1e-15);
    }

    #[test]
    fn tracker_matches_direct_sums() {
        let h = sym(6, 4) / 6.0;
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).normalize();
        let x = normalized_solution(&h, &b).unwrap();
        let plan = ChebyshevPlan::with_b(12, 1e-3).unwrap();
        let t = cheb_apply(&h, &b, 2 * plan.coeffs.len());
        let tracker = TheoryTracker::new(h.clone(), b.clone(), x.clone(), &plan);
        for pt in tracker {
            let f = f_apply(&h, &b, &plan, pt.j);
            // Reference total norm through the explicit Gram sum.
            let mut total = 0.0;
            for k in 0..=pt.j {
                for m in 0..=pt.j {
                    total += plan.coeffs[k] * plan.coeffs[m] * b.dot(&t[2 * k.abs_diff(m)]);
                }
            }
            assert!((pt.p - f.norm_squared() / total).abs() < 1e-12);
            assert!((pt.f - x.dot(&f).powi(2) / f.norm_squared()).abs() < 1e-12);
        }
    }
}
