//! Interference operations: transforms that mix the amplitudes of coherent
//! branches and therefore may create or destroy branches.
//!
//! Two branches are coherent when every register not acted on (the idle
//! registers, garbage-stack entries included) holds the same value. Each
//! operation sorts the table so that coherent branches are adjacent, applies a
//! small dense transform per group and drops amplitudes at or below the
//! state's pruning tolerance.

use std::ops::Range;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::state::{width_mask, Register, SparseState, ValueKind};

/// Largest Hadamard transform a single call may materialize per group.
pub const MAX_TRANSFORM_BITS: u32 = 20;

/// Coherent branches with respect to a set of active registers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchGroup {
    /// Values of the idle registers (allocation order, then stack entries).
    pub idle_key: Vec<u64>,
    /// Branch indices in the state's current order.
    pub members: Vec<usize>,
}

/// Sorts the state by idle registers and returns the coherent groups. Inside
/// a group, branches are ordered by the active registers.
pub fn group_branches(state: &mut SparseState, active: &[Register]) -> Result<Vec<BranchGroup>> {
    let active_slots: Vec<usize> = active.iter().map(|r| state.slot(*r)).collect::<Result<_>>()?;
    let idle: Vec<usize> = state
        .canonical_slots()
        .into_iter()
        .filter(|s| !active_slots.contains(s))
        .collect();
    let order: Vec<usize> = idle.iter().chain(active_slots.iter()).copied().collect();
    state.sort_by_slots(&order);
    let stride = state.stride();
    let values = state.values();
    let ranges = split_runs(values, stride, |a, b| idle.iter().all(|&s| a[s] == b[s]));
    Ok(ranges
        .into_iter()
        .map(|r| BranchGroup {
            idle_key: idle.iter().map(|&s| values[r.start * stride + s]).collect(),
            members: r.collect(),
        })
        .collect())
}

/// Maximal runs of consecutive rows for which `same(first_row, row)` holds.
fn split_runs<F>(values: &[u64], stride: usize, same: F) -> Vec<Range<usize>>
where
    F: Fn(&[u64], &[u64]) -> bool,
{
    let m = values.len() / stride.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    for b in 1..=m {
        if b == m || !same(&values[start * stride..(start + 1) * stride], &values[b * stride..(b + 1) * stride]) {
            out.push(start..b);
            start = b;
        }
    }
    out
}

/// Hadamard transform on the low `m` qubits of `reg`. Every branch value must
/// be below `2^m`.
pub fn hadamard_transform(state: &mut SparseState, reg: Register, m: u32) -> Result<()> {
    check_transform_width(reg, m)?;
    let slot = state.slot(reg)?;
    if m < 64 {
        let stride = state.stride();
        if let Some(row) = state.values().chunks(stride).find(|row| row[slot] >> m != 0) {
            return Err(Error::ValueExceedsTransform {
                name: state.name(reg)?.to_string(),
                value: row[slot],
                bits: m,
            });
        }
    }
    hadamard_low_bits(state, reg, m)
}

/// Hadamard transform on the low `m` qubits of `reg`; the remaining high bits
/// act as idle qubits.
pub fn hadamard_low_bits(state: &mut SparseState, reg: Register, m: u32) -> Result<()> {
    check_transform_width(reg, m)?;
    let slot = state.slot(reg)?;
    if m == 0 {
        state.record_op();
        return Ok(());
    }
    let mut order: Vec<usize> = state.canonical_slots().into_iter().filter(|&s| s != slot).collect();
    order.push(slot);
    state.sort_by_slots(&order);

    let stride = state.stride();
    let low = width_mask(m);
    let dim = 1usize << m;
    let norm = 1.0 / (dim as f64).sqrt();
    let tol = state.prune_tol();
    let groups = split_runs(state.values(), stride, |a, b| {
        (0..stride).all(|s| if s == slot { a[s] & !low == b[s] & !low } else { a[s] == b[s] })
    });

    let values = state.values();
    let amps = state.amplitudes();
    let (new_values, new_amps) = exec::flat_map_tables(&groups, |g, out_v, out_a| {
        let template = &values[g.start * stride..(g.start + 1) * stride];
        let high = template[slot] & !low;
        let size = g.len();
        let emit = |y: usize, amp: Complex64, out_v: &mut Vec<u64>, out_a: &mut Vec<Complex64>| {
            if amp.norm() > tol {
                let at = out_v.len();
                out_v.extend_from_slice(template);
                out_v[at + slot] = high | y as u64;
                out_a.push(amp);
            }
        };
        if (size as u32) <= m {
            // Few inputs: evaluate each output directly.
            for y in 0..dim {
                let mut acc = Complex64::new(0.0, 0.0);
                for b in g.clone() {
                    let x = (values[b * stride + slot] & low) as usize;
                    if (x & y).count_ones().is_multiple_of(2) {
                        acc += amps[b];
                    } else {
                        acc -= amps[b];
                    }
                }
                emit(y, acc * norm, out_v, out_a);
            }
        } else {
            let mut buf = vec![Complex64::new(0.0, 0.0); dim];
            for b in g.clone() {
                buf[(values[b * stride + slot] & low) as usize] = amps[b];
            }
            fwht(&mut buf);
            for (y, amp) in buf.into_iter().enumerate() {
                emit(y, amp * norm, out_v, out_a);
            }
        }
    });
    state.replace_table(new_values, new_amps);
    state.record_op();
    Ok(())
}

fn check_transform_width(reg: Register, m: u32) -> Result<()> {
    if m > reg.width() || m > MAX_TRANSFORM_BITS {
        return Err(Error::TransformTooWide(m));
    }
    Ok(())
}

/// Unnormalized in-place Walsh-Hadamard transform.
fn fwht(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (buf[j], buf[j + h]);
                buf[j] = x + y;
                buf[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

/// Phase attached to the `√a` amplitude of a conditional rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SignRule {
    /// The same unit-modulus phase on every branch.
    Constant(Complex64),
    /// For sign-magnitude values: `i` when the sign bit is set and
    /// `row < col`, `-i` when it is set and `row > col`, `1` otherwise. Two
    /// mirrored entries then multiply to `-|a|`.
    NegativeOffDiagonal { row: Register, col: Register },
}

impl SignRule {
    pub fn positive() -> Self {
        SignRule::Constant(Complex64::new(1.0, 0.0))
    }
}

enum ResolvedSign {
    Constant(Complex64),
    OffDiagonal { row: usize, col: usize },
}

struct RotationPlan {
    flag: usize,
    value: usize,
    frac_bits: u32,
    magnitude_mask: u64,
    sign_shift: Option<u32>,
    sign: ResolvedSign,
}

impl RotationPlan {
    fn new(state: &SparseState, flag: Register, value: Register, rule: SignRule) -> Result<Self> {
        let (frac_bits, magnitude_mask, sign_shift) = match value.kind() {
            ValueKind::Fixed { frac_bits } => (frac_bits, value.mask(), None),
            ValueKind::SignedFixed { frac_bits } if value.width() >= 2 => {
                (frac_bits, width_mask(value.width() - 1), Some(value.width() - 1))
            }
            _ => {
                return Err(Error::TypeMismatch {
                    name: state.name(value)?.to_string(),
                    found: value.kind().to_string(),
                    expected: "a fixed-point register",
                })
            }
        };
        if flag.id() == value.id() {
            return Err(Error::AliasedOutput(state.name(flag)?.to_string()));
        }
        let sign = match rule {
            SignRule::Constant(p) => {
                if (p.norm() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("phase {p} is not unit-modulus")));
                }
                ResolvedSign::Constant(p)
            }
            SignRule::NegativeOffDiagonal { row, col } => {
                if sign_shift.is_none() {
                    return Err(Error::InvalidParameter(
                        "sign rule needs a sign-magnitude value register".into(),
                    ));
                }
                ResolvedSign::OffDiagonal {
                    row: state.slot(row)?,
                    col: state.slot(col)?,
                }
            }
        };
        Ok(RotationPlan {
            flag: state.slot(flag)?,
            value: state.slot(value)?,
            frac_bits,
            magnitude_mask,
            sign_shift,
            sign,
        })
    }

    /// `(√a, √(1-a), σ)` for a branch; `a` is clamped to `[0, 1]`.
    fn coefficients(&self, row: &[u64]) -> (f64, f64, Complex64) {
        let raw = row[self.value];
        let a = ((raw & self.magnitude_mask) as f64 / (self.frac_bits as f64).exp2()).clamp(0.0, 1.0);
        let negative = self.sign_shift.is_some_and(|s| raw >> s & 1 == 1);
        let sigma = match self.sign {
            ResolvedSign::Constant(p) => p,
            ResolvedSign::OffDiagonal { row: r, col: c } => {
                if !negative || row[r] == row[c] {
                    Complex64::new(1.0, 0.0)
                } else if row[r] < row[c] {
                    Complex64::new(0.0, 1.0)
                } else {
                    Complex64::new(0.0, -1.0)
                }
            }
        };
        (a.sqrt(), (1.0 - a).sqrt(), sigma)
    }
}

/// Rotates the one-qubit `flag` conditioned on the fixed-point value `a` in
/// `value`:
///
/// ```text
/// |0⟩ → σ√a |0⟩ + √(1-a) |1⟩
/// |1⟩ → -√(1-a) |0⟩ + σ̄√a |1⟩
/// ```
pub fn conditional_rotation(state: &mut SparseState, flag: Register, value: Register, rule: SignRule) -> Result<()> {
    rotate(state, flag, value, rule, false)
}

/// Inverse of [`conditional_rotation`].
pub fn conditional_rotation_adjoint(
    state: &mut SparseState,
    flag: Register,
    value: Register,
    rule: SignRule,
) -> Result<()> {
    rotate(state, flag, value, rule, true)
}

fn rotate(state: &mut SparseState, flag: Register, value: Register, rule: SignRule, adjoint: bool) -> Result<()> {
    if flag.width() != 1 {
        return Err(Error::InvalidParameter(format!(
            "rotation flag must be one qubit, got {} bits",
            flag.width()
        )));
    }
    let plan = RotationPlan::new(state, flag, value, rule)?;
    let mut order: Vec<usize> = state.canonical_slots().into_iter().filter(|&s| s != plan.flag).collect();
    order.push(plan.flag);
    state.sort_by_slots(&order);

    let stride = state.stride();
    let tol = state.prune_tol();
    let f = plan.flag;
    let groups = split_runs(state.values(), stride, |a, b| {
        (0..stride).all(|s| s == f || a[s] == b[s])
    });
    let values = state.values();
    let amps = state.amplitudes();
    let (new_values, new_amps) = exec::flat_map_tables(&groups, |g, out_v, out_a| {
        let template = &values[g.start * stride..(g.start + 1) * stride];
        let (mut c0, mut c1) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for b in g.clone() {
            if values[b * stride + f] == 0 {
                c0 = amps[b];
            } else {
                c1 = amps[b];
            }
        }
        let (sa, sb, sigma) = plan.coefficients(template);
        let (n0, n1) = if adjoint {
            (sigma.conj() * sa * c0 + sb * c1, -sb * c0 + sigma * sa * c1)
        } else {
            (sigma * sa * c0 - sb * c1, sb * c0 + sigma.conj() * sa * c1)
        };
        for (bit, amp) in [(0u64, n0), (1u64, n1)] {
            if amp.norm() > tol {
                let at = out_v.len();
                out_v.extend_from_slice(template);
                out_v[at + f] = bit;
                out_a.push(amp);
            }
        }
    });
    state.replace_table(new_values, new_amps);
    state.record_op();
    Ok(())
}

/// Removes branches with `|amplitude| <= tol`.
pub fn prune_zero(state: &mut SparseState, tol: f64) {
    state.prune(tol);
    state.record_op();
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn grouping_by_idle_registers() {
        let mut st = SparseState::new();
        let a = st.alloc(3, ValueKind::Unsigned, "a").unwrap();
        let b = st.alloc(3, ValueKind::Unsigned, "b").unwrap();
        st.load_branches(vec![(vec![1, 2], c(0.6)), (vec![3, 2], c(0.8))]).unwrap();
        let g = group_branches(&mut st, &[a]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].members, vec![0, 1]);
        let g = group_branches(&mut st, &[b]).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn grouping_matches_brute_force_partition() {
        let mut st = SparseState::new();
        let a = st.alloc(2, ValueKind::Unsigned, "a").unwrap();
        st.alloc(2, ValueKind::Unsigned, "b").unwrap();
        st.alloc(2, ValueKind::Unsigned, "c").unwrap();
        let rows = [[0, 1, 2], [1, 1, 2], [2, 0, 0], [3, 0, 0], [0, 3, 3], [1, 2, 3], [2, 2, 3], [3, 1, 1]];
        st.load_branches(rows.iter().map(|r| (r.to_vec(), c(0.125f64.sqrt()))).collect()).unwrap();
        let mut keys = BTreeMap::new();
        for r in rows {
            *keys.entry((r[1], r[2])).or_insert(0) += 1;
        }
        let groups = group_branches(&mut st, &[a]).unwrap();
        assert_eq!(groups.len(), keys.len());
        let mut seen: Vec<usize> = groups.iter().flat_map(|g| g.members.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        for g in &groups {
            assert_eq!(keys[&(g.idle_key[0], g.idle_key[1])], g.members.len());
        }
    }

    #[test]
    fn hadamard_single_qubit() {
        let mut st = SparseState::new();
        let r = st.alloc(1, ValueKind::Unsigned, "r").unwrap();
        hadamard_transform(&mut st, r, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let br = st.branches();
        assert_eq!(br.len(), 2);
        for (i, (vals, amp)) in br.into_iter().enumerate() {
            assert_eq!(vals, vec![i as u64]);
            assert!(close(amp, c(h), 1e-15));
        }
        hadamard_transform(&mut st, r, 1).unwrap();
        let br = st.branches();
        assert_eq!(br.len(), 1);
        assert!(close(br[0].1, c(1.0), 1e-15));
    }

    #[test]
    fn hadamard_cancellation_prunes() {
        let mut st = SparseState::new();
        let r = st.alloc(1, ValueKind::Unsigned, "r").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        st.load_register(r, &[(0, c(h)), (1, c(-h))]).unwrap();
        hadamard_transform(&mut st, r, 1).unwrap();
        let br = st.branches();
        assert_eq!(br.len(), 1);
        assert_eq!(br[0].0, vec![1]);
        assert!(close(br[0].1, c(1.0), 1e-15));
    }

    #[test]
    fn hadamard_rejects_wide_values() {
        let mut st = SparseState::new();
        let r = st.alloc(4, ValueKind::Unsigned, "r").unwrap();
        st.load_register(r, &[(5, c(1.0))]).unwrap();
        assert!(matches!(
            hadamard_transform(&mut st, r, 2),
            Err(Error::ValueExceedsTransform { value: 5, bits: 2, .. })
        ));
        assert!(matches!(hadamard_transform(&mut st, r, 5), Err(Error::TransformTooWide(5))));
        // The low-bit variant keeps the high bits as they are.
        hadamard_low_bits(&mut st, r, 2).unwrap();
        let vals: Vec<u64> = st.branches().into_iter().map(|b| b.0[0]).collect();
        assert_eq!(vals, vec![4, 5, 6, 7]);
        assert!(close(st.amplitude_of(&[5]), c(-0.5), 1e-15));
    }

    #[test]
    fn hadamard_matches_dense_matrix() {
        // Three qubits, arbitrary input, checked against the explicit matrix
        // for both the direct and the butterfly path.
        for n_inputs in [2usize, 8] {
            let mut st = SparseState::new();
            let r = st.alloc(3, ValueKind::Unsigned, "r").unwrap();
            let input: Vec<(u64, Complex64)> = (0..n_inputs as u64)
                .map(|x| (x, Complex64::new(0.1 * x as f64 + 0.2, 0.05 * x as f64)))
                .collect();
            st.load_register(r, &input).unwrap();
            hadamard_transform(&mut st, r, 3).unwrap();
            for y in 0..8u64 {
                let mut want = Complex64::new(0.0, 0.0);
                for &(x, a) in &input {
                    let s = if (x & y).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
                    want += a * s / 8f64.sqrt();
                }
                assert!(close(st.amplitude_of(&[y]), want, 1e-14), "y={y}");
            }
        }
    }

    #[test]
    fn rotation_examples() {
        let mut st = SparseState::new();
        let f = st.alloc(1, ValueKind::Bool, "f").unwrap();
        let v = st.alloc(4, ValueKind::Fixed { frac_bits: 4 }, "v").unwrap();
        st.load_branches(vec![(vec![0, 4], c(1.0))]).unwrap();
        conditional_rotation(&mut st, f, v, SignRule::positive()).unwrap();
        assert!(close(st.amplitude_of(&[0, 4]), c(0.5), 1e-15));
        assert!(close(st.amplitude_of(&[1, 4]), c(0.75f64.sqrt()), 1e-15));

        let mut st = SparseState::new();
        let f = st.alloc(1, ValueKind::Bool, "f").unwrap();
        let v = st.alloc(4, ValueKind::Fixed { frac_bits: 4 }, "v").unwrap();
        conditional_rotation(&mut st, f, v, SignRule::positive()).unwrap();
        assert_eq!(st.branches(), vec![(vec![1, 0], c(1.0))]);
    }

    #[test]
    fn rotation_rejects_bad_inputs() {
        let mut st = SparseState::new();
        let f = st.alloc(2, ValueKind::Unsigned, "f").unwrap();
        let v = st.alloc(4, ValueKind::Fixed { frac_bits: 4 }, "v").unwrap();
        let u = st.alloc(4, ValueKind::Unsigned, "u").unwrap();
        assert!(conditional_rotation(&mut st, f, v, SignRule::positive()).is_err());
        let g = st.alloc(1, ValueKind::Bool, "g").unwrap();
        assert!(matches!(
            conditional_rotation(&mut st, g, u, SignRule::positive()),
            Err(Error::TypeMismatch { .. })
        ));
        assert!(conditional_rotation(&mut st, g, v, SignRule::Constant(c(2.0))).is_err());
    }

    #[test]
    fn off_diagonal_sign_rule_multiplies_to_negative() {
        // Value register: sign bit + 3 fractional bits; 0b1010 = -0.25.
        let mut st = SparseState::new();
        let f = st.alloc(1, ValueKind::Bool, "f").unwrap();
        let v = st.alloc(4, ValueKind::SignedFixed { frac_bits: 3 }, "v").unwrap();
        let r = st.alloc(2, ValueKind::Unsigned, "r").unwrap();
        let col = st.alloc(2, ValueKind::Unsigned, "c").unwrap();
        st.load_branches(vec![(vec![0, 0b1010, 1, 2], c(1.0))]).unwrap();
        let rule = SignRule::NegativeOffDiagonal { row: r, col };
        conditional_rotation(&mut st, f, v, rule).unwrap();
        let upper = st.amplitude_of(&[0, 0b1010, 1, 2]);

        let mut st = SparseState::new();
        let f = st.alloc(1, ValueKind::Bool, "f").unwrap();
        let v = st.alloc(4, ValueKind::SignedFixed { frac_bits: 3 }, "v").unwrap();
        let r = st.alloc(2, ValueKind::Unsigned, "r").unwrap();
        let col = st.alloc(2, ValueKind::Unsigned, "c").unwrap();
        st.load_branches(vec![(vec![0, 0b1010, 2, 1], c(1.0))]).unwrap();
        conditional_rotation(&mut st, f, v, SignRule::NegativeOffDiagonal { row: r, col }).unwrap();
        let lower = st.amplitude_of(&[0, 0b1010, 2, 1]);
        assert!(close(upper.conj() * lower, c(-0.25), 1e-15));
    }

    #[test]
    fn prune_examples() {
        let mut st = SparseState::new();
        let r = st.alloc(2, ValueKind::Unsigned, "r").unwrap();
        st.load_register(r, &[(0, c(1.0)), (1, c(1e-13)), (2, c(0.0))]).unwrap();
        prune_zero(&mut st, 1e-12);
        assert_eq!(st.branch_count(), 1);
        prune_zero(&mut st, 1e-12);
        assert_eq!(st.branch_count(), 1);
    }

    fn random_state(entries: &[(u64, u64, f64, f64)]) -> Option<(SparseState, Register, Register, Register)> {
        let mut st = SparseState::new();
        let a = st.alloc(3, ValueKind::Unsigned, "a").unwrap();
        let f = st.alloc(1, ValueKind::Bool, "f").unwrap();
        let v = st.alloc(3, ValueKind::Fixed { frac_bits: 3 }, "v").unwrap();
        let mut map = BTreeMap::new();
        for &(x, y, re, im) in entries {
            map.insert((x % 8, y % 2, (x / 8) % 8), Complex64::new(re, im));
        }
        let norm: f64 = map.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-3 {
            return None;
        }
        st.load_branches(map.into_iter().map(|((x, y, z), a)| (vec![x, y, z], a / norm)).collect()).ok()?;
        Some((st, a, f, v))
    }

    proptest! {
        #[test]
        fn hadamard_is_an_involution(entries in prop::collection::vec((0u64..64, 0u64..2, -1.0f64..1.0, -1.0f64..1.0), 1..12)) {
            if let Some((mut st, a, _, _)) = random_state(&entries) {
                let before = st.branches();
                hadamard_transform(&mut st, a, 3).unwrap();
                prop_assert!((st.norm() - 1.0).abs() < 1e-9);
                hadamard_transform(&mut st, a, 3).unwrap();
                let after = st.branches();
                prop_assert_eq!(before.len(), after.len());
                for (x, y) in before.iter().zip(&after) {
                    prop_assert_eq!(&x.0, &y.0);
                    prop_assert!(close(x.1, y.1, 1e-12));
                }
            }
        }

        #[test]
        fn rotation_adjoint_restores(entries in prop::collection::vec((0u64..64, 0u64..2, -1.0f64..1.0, -1.0f64..1.0), 1..12), phase in 0.0f64..6.3) {
            if let Some((mut st, _, f, v)) = random_state(&entries) {
                let rule = SignRule::Constant(Complex64::from_polar(1.0, phase));
                let before = st.branches();
                conditional_rotation(&mut st, f, v, rule).unwrap();
                prop_assert!((st.norm() - 1.0).abs() < 1e-9);
                conditional_rotation_adjoint(&mut st, f, v, rule).unwrap();
                let after = st.branches();
                prop_assert_eq!(before.len(), after.len());
                for (x, y) in before.iter().zip(&after) {
                    prop_assert_eq!(&x.0, &y.0);
                    prop_assert!(close(x.1, y.1, 1e-12));
                }
            }
        }
    }
}
