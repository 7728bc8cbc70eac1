//! The walk program on six registers `j_c, j, b1, k_c, k, b2`.
//!
//! `j` and `k` hold row and column indices with one extra bit so that padding
//! column indices fit; `j_c` and `k_c` extend them to the square index space
//! on which the sparsity oracle is a bijection; `b1` and `b2` are the one-qubit
//! flags of the isometry.
//!
//! The matrix is read from a [`QramImage`] holding the element segment
//! followed by the sorted column-index segment, `s` words per row.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interference::{conditional_rotation, conditional_rotation_adjoint, hadamard_low_bits, SignRule};
use crate::qbs::{qbs, QbsContext};
use crate::semiquantum::{phase_flip_if_any_nonzero, qram_query, qram_query_ctrl, swap_registers, xor_out_of_place, Control, QramImage};
use crate::state::{Register, SparseState, ValueKind};

/// Shape of a packed matrix image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Matrix dimension `N`, a power of two.
    pub rows: u64,
    /// Stored entries per row `s`, a power of two.
    pub sparsity: u64,
    /// Fractional bits of an element word.
    pub word_length: u32,
    /// Total bits of an element word (fraction, integer bit if any, sign bit if any).
    pub element_width: u32,
    /// Elements are sign-magnitude.
    pub signed: bool,
    pub element_offset: u64,
    pub sparsity_offset: u64,
}

impl WalkParams {
    /// Index width `n = log2 N + 1`.
    pub fn index_width(&self) -> u32 {
        self.rows.trailing_zeros() + 1
    }

    pub fn log_sparsity(&self) -> u32 {
        self.sparsity.trailing_zeros()
    }

    /// Address width: enough for every address the walk can form, including
    /// those built from out-of-range rows.
    pub fn address_width(&self) -> u32 {
        (self.rows * self.sparsity).trailing_zeros() + 3
    }

    pub fn element_kind(&self) -> ValueKind {
        if self.signed {
            ValueKind::SignedFixed { frac_bits: self.word_length }
        } else {
            ValueKind::Fixed { frac_bits: self.word_length }
        }
    }

    fn validate(&self) -> Result<()> {
        let pow2 = |x: u64| x > 0 && x.is_power_of_two();
        if !pow2(self.rows) || !pow2(self.sparsity) || self.sparsity > self.rows.max(1) {
            return Err(Error::InvalidParameter(format!(
                "need powers of two with s <= N, got N={} s={}",
                self.rows, self.sparsity
            )));
        }
        if self.word_length == 0 || self.element_width < self.word_length || self.element_width > 62 {
            return Err(Error::InvalidParameter(format!(
                "bad element format: {} fractional bits in {} bits",
                self.word_length, self.element_width
            )));
        }
        Ok(())
    }
}

/// The six walk registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkRegisters {
    pub j_c: Register,
    pub j: Register,
    pub b1: Register,
    pub k_c: Register,
    pub k: Register,
    pub b2: Register,
}

impl WalkRegisters {
    /// Registers that are zero on the encoded subspace.
    pub fn flag_registers(&self) -> [Register; 5] {
        [self.b1, self.k, self.b2, self.j_c, self.k_c]
    }
}

/// Register order used by the isometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsometryOrder {
    /// Rotate while `k` still holds the position, then convert it to a column
    /// once. Valid when the sign rule does not need the column.
    Fused,
    /// Convert to the column before rotating and back afterwards, so the
    /// rotation can see row and column.
    RowColumn,
}

#[derive(Clone, Debug)]
pub struct WalkContext {
    pub params: WalkParams,
    pub regs: WalkRegisters,
    pub image: QramImage,
    pub order: IsometryOrder,
}

impl WalkContext {
    /// Allocates the walk registers in `state` (which must not hold other
    /// registers the walk would overwrite).
    pub fn new(state: &mut SparseState, params: WalkParams, image: QramImage) -> Result<Self> {
        params.validate()?;
        if image.address_width() < params.address_width() {
            return Err(Error::WidthMismatch(image.address_width(), params.address_width()));
        }
        let n = params.index_width();
        let regs = WalkRegisters {
            j_c: state.alloc(n, ValueKind::Unsigned, "j_c")?,
            j: state.alloc(n, ValueKind::Unsigned, "j")?,
            b1: state.alloc(1, ValueKind::Bool, "b1")?,
            k_c: state.alloc(n, ValueKind::Unsigned, "k_c")?,
            k: state.alloc(n, ValueKind::Unsigned, "k")?,
            b2: state.alloc(1, ValueKind::Bool, "b2")?,
        };
        let order = if params.signed {
            IsometryOrder::RowColumn
        } else {
            IsometryOrder::Fused
        };
        Ok(WalkContext {
            params,
            regs,
            image,
            order,
        })
    }

    /// Loads `Σ_j amps[j] |j̃⟩` (all other walk registers zero).
    pub fn load_input(&self, state: &mut SparseState, amps: &[Complex64]) -> Result<()> {
        if amps.len() as u64 > self.params.rows {
            return Err(Error::InvalidParameter(format!(
                "input has {} entries for N={}",
                amps.len(),
                self.params.rows
            )));
        }
        let pairs: Vec<(u64, Complex64)> = amps.iter().enumerate().map(|(i, &a)| (i as u64, a)).collect();
        state.load_register(self.regs.j, &pairs)
    }

    /// Amplitudes of the branches with all flag registers zero, indexed by `j`
    /// over the full `2^n` range.
    pub fn flag_zero_amplitudes(&self, state: &SparseState) -> Result<Vec<Complex64>> {
        let flags: Vec<usize> = self
            .regs
            .flag_registers()
            .iter()
            .map(|r| state.slot(*r))
            .collect::<Result<_>>()?;
        let j = state.slot(self.regs.j)?;
        let mut out = vec![Complex64::new(0.0, 0.0); 1 << self.params.index_width()];
        for (row, amp) in state.values().chunks(state.stride()).zip(state.amplitudes()) {
            if flags.iter().all(|&s| row[s] == 0) {
                out[row[j] as usize] += amp;
            }
        }
        Ok(out)
    }

    /// Squared norm of the flag-zero part.
    pub fn flag_zero_mass(&self, state: &SparseState) -> Result<f64> {
        Ok(self.flag_zero_amplitudes(state)?.iter().map(|a| a.norm_sqr()).sum())
    }

    fn row_base(&self, segment: u64) -> impl Fn(&[u64]) -> u64 + Sync + Send {
        let s = self.params.sparsity;
        move |v: &[u64]| segment + v[0] * s
    }
}

/// `elem ← elem ⊕ a_{j,l}` with `l` read from `k`, applied only where
/// `j_c = k_c = 0`.
pub fn oa_prime(state: &mut SparseState, ctx: &WalkContext, elem: Register) -> Result<()> {
    let r = ctx.regs;
    let tmp = state.alloc(ctx.image.address_width(), ValueKind::Unsigned, "oa.addr")?;
    let base = ctx.row_base(ctx.params.element_offset);
    let addr = move |v: &[u64]| base(v) + v[1];
    xor_out_of_place(state, &addr, &[r.j, r.k], tmp)?;
    qram_query_ctrl(state, &ctx.image, tmp, elem, &[Control::new(r.j_c, 0), Control::new(r.k_c, 0)])?;
    xor_out_of_place(state, &addr, &[r.j, r.k], tmp)?;
    state.free(tmp)
}

/// `|j, l, z⟩ → |j, z ⊕ k_{j,l}, l ⊕ i(z ⊕ k_{j,l})⟩` on `(j, k, k_c)`.
pub fn os_prime(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    column_lookup(state, ctx)?;
    search(state, ctx)?;
    swap_registers(state, ctx.regs.k, ctx.regs.k_c)
}

pub fn os_prime_adjoint(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    swap_registers(state, ctx.regs.k, ctx.regs.k_c)?;
    search(state, ctx)?;
    column_lookup(state, ctx)
}

/// `k_c ← k_c ⊕ k_{j,l}`.
fn column_lookup(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    let r = ctx.regs;
    let tmp = state.alloc(ctx.image.address_width(), ValueKind::Unsigned, "os.addr")?;
    let base = ctx.row_base(ctx.params.sparsity_offset);
    let addr = move |v: &[u64]| base(v) + v[1];
    xor_out_of_place(state, &addr, &[r.j, r.k], tmp)?;
    qram_query(state, &ctx.image, tmp, r.k_c)?;
    xor_out_of_place(state, &addr, &[r.j, r.k], tmp)?;
    state.free(tmp)
}

/// `k ← k ⊕ i(k_c)` within row `j`'s window.
fn search(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    let r = ctx.regs;
    let offset = state.alloc(ctx.image.address_width(), ValueKind::Unsigned, "os.offset")?;
    let base = ctx.row_base(ctx.params.sparsity_offset);
    xor_out_of_place(state, &base, &[r.j], offset)?;
    let mut q = QbsContext::new(offset, r.k_c, r.k, ctx.params.sparsity);
    // Windows of out-of-range rows are not sorted; the search is still an
    // XOR of a function of its inputs there, which is all unitarity needs.
    q.check_sorted = false;
    qbs(state, &ctx.image, &q)?;
    xor_out_of_place(state, &base, &[r.j], offset)?;
    state.free(offset)
}

fn sign_rule(ctx: &WalkContext) -> SignRule {
    if ctx.params.signed {
        SignRule::NegativeOffDiagonal {
            row: ctx.regs.j,
            col: ctx.regs.k,
        }
    } else {
        SignRule::positive()
    }
}

/// The isometry `T̃`: `|j̃⟩ → (1/√s) Σ_l (√a_{j,l} |k_{j,l}, 0⟩ + √(1-|a_{j,l}|) |k_{j,l}, 1⟩)`
/// on `(k, b2)`.
pub fn t_tilde(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    let r = ctx.regs;
    hadamard_low_bits(state, r.k, ctx.params.log_sparsity())?;
    let elem = state.alloc(ctx.params.element_width, ctx.params.element_kind(), "elem")?;
    oa_prime(state, ctx, elem)?;
    match ctx.order {
        IsometryOrder::Fused => {
            conditional_rotation(state, r.b2, elem, sign_rule(ctx))?;
            oa_prime(state, ctx, elem)?;
            state.free(elem)?;
            os_prime(state, ctx)
        }
        IsometryOrder::RowColumn => {
            os_prime(state, ctx)?;
            conditional_rotation(state, r.b2, elem, sign_rule(ctx))?;
            os_prime_adjoint(state, ctx)?;
            oa_prime(state, ctx, elem)?;
            state.free(elem)?;
            os_prime(state, ctx)
        }
    }
}

pub fn t_tilde_adjoint(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    let r = ctx.regs;
    os_prime_adjoint(state, ctx)?;
    let elem = state.alloc(ctx.params.element_width, ctx.params.element_kind(), "elem")?;
    oa_prime(state, ctx, elem)?;
    match ctx.order {
        IsometryOrder::Fused => {
            conditional_rotation_adjoint(state, r.b2, elem, sign_rule(ctx))?;
        }
        IsometryOrder::RowColumn => {
            os_prime(state, ctx)?;
            conditional_rotation_adjoint(state, r.b2, elem, sign_rule(ctx))?;
            os_prime_adjoint(state, ctx)?;
        }
    }
    oa_prime(state, ctx, elem)?;
    state.free(elem)?;
    hadamard_low_bits(state, r.k, ctx.params.log_sparsity())
}

/// Negates every branch where one of `b1, k, b2, j_c, k_c` is nonzero.
pub fn reflection_p(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    phase_flip_if_any_nonzero(state, &ctx.regs.flag_registers())
}

/// Exchanges the row and column halves: `j↔k`, `j_c↔k_c`, `b1↔b2`.
pub fn swap_halves(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    let r = ctx.regs;
    swap_registers(state, r.j, r.k)?;
    swap_registers(state, r.j_c, r.k_c)?;
    swap_registers(state, r.b1, r.b2)
}

/// One walk step `W = S T̃ P T̃†`.
pub fn walk_w(state: &mut SparseState, ctx: &WalkContext) -> Result<()> {
    t_tilde_adjoint(state, ctx)?;
    reflection_p(state, ctx)?;
    t_tilde(state, ctx)?;
    swap_halves(state, ctx)
}

/// Column `col` of the block encoded by `T̃† S T̃`, read from the flag-zero
/// part after applying it to `|col̃⟩`. Entries are indexed by row over `[0, 2^n)`.
pub fn block_column(ctx: &WalkContext, template: &SparseState, col: u64) -> Result<Vec<Complex64>> {
    let mut st = template.empty_like();
    let mut e = vec![Complex64::new(0.0, 0.0); col as usize + 1];
    e[col as usize] = Complex64::new(1.0, 0.0);
    ctx.load_input(&mut st, &e)?;
    t_tilde(&mut st, ctx)?;
    swap_halves(&mut st, ctx)?;
    t_tilde_adjoint(&mut st, ctx)?;
    ctx.flag_zero_amplitudes(&st)
}

/// Analytic qubit count for the walk: `(n + k_w + 2)·log s + 5n + k_w + 4`.
pub fn qubit_estimate(rows: u64, sparsity: u64, word_length: u32) -> u64 {
    let n = u64::from(rows.trailing_zeros()) + 1;
    let log_s = u64::from(sparsity.trailing_zeros());
    (n + u64::from(word_length) + 2) * log_s + 5 * n + u64::from(word_length) + 4
}
