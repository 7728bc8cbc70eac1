//! Sparse multi-register state: the branch table, register metadata, garbage
//! stack and resource accounting.
//!
//! Branches are stored branch-major: `values[b * stride + slot]` is the value
//! of the register living in `slot` for branch `b`. Register values always sit
//! in a full 64-bit word regardless of declared width. Unused slots read 0 in
//! every branch, which lets allocation reuse a slot without touching the table.

use std::cmp::Ordering;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// Branches with an amplitude magnitude at or below this are treated as zero.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-12;

/// Value interpretation attached to a register and checked when an operation
/// is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Unsigned,
    /// Two's complement.
    Signed,
    /// Unsigned fixed point with `frac_bits` fractional bits.
    Fixed { frac_bits: u32 },
    /// Sign-magnitude fixed point: the top bit is the sign.
    SignedFixed { frac_bits: u32 },
    Bool,
}

impl ValueKind {
    pub fn is_integer(self) -> bool {
        matches!(self, ValueKind::Unsigned | ValueKind::Signed)
    }

    pub fn is_fixed(self) -> bool {
        matches!(self, ValueKind::Fixed { .. } | ValueKind::SignedFixed { .. })
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Unsigned => write!(f, "uint"),
            ValueKind::Signed => write!(f, "int"),
            ValueKind::Fixed { frac_bits } => write!(f, "ufixed.{frac_bits}"),
            ValueKind::SignedFixed { frac_bits } => write!(f, "fixed.{frac_bits}"),
            ValueKind::Bool => write!(f, "bool"),
        }
    }
}

/// Handle to an allocated register. Cheap to copy; only valid for the state
/// (and clones of it) that allocated it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Register {
    id: u32,
    width: u32,
    kind: ValueKind,
}

impl Register {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    /// Bit mask covering the register's declared width.
    pub fn mask(&self) -> u64 {
        width_mask(self.width)
    }
}

pub(crate) fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Clone, Debug)]
struct RegisterMeta {
    reg: Register,
    slot: usize,
    name: String,
}

#[derive(Clone, Copy, Debug)]
struct StackEntry {
    slot: usize,
    width: u32,
}

/// Peak usage counters. All fields only ever grow during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceStats {
    pub max_working_registers: usize,
    pub max_working_qubits: u64,
    pub max_branches: usize,
    pub op_count: u64,
    pub qram_queries: u64,
}

impl ResourceStats {
    /// Element-wise maximum of the peak counters; operation counters add.
    pub fn merge(&mut self, other: &ResourceStats) {
        self.max_working_registers = self.max_working_registers.max(other.max_working_registers);
        self.max_working_qubits = self.max_working_qubits.max(other.max_working_qubits);
        self.max_branches = self.max_branches.max(other.max_branches);
        self.op_count += other.op_count;
        self.qram_queries += other.qram_queries;
    }
}

/// A sparse quantum state over a dynamic set of registers.
#[derive(Clone, Debug)]
pub struct SparseState {
    stride: usize,
    values: Vec<u64>,
    amps: Vec<Complex64>,
    registers: Vec<RegisterMeta>,
    free_slots: Vec<usize>,
    stack: Vec<StackEntry>,
    next_id: u32,
    canonical: bool,
    working_qubits: u64,
    stats: ResourceStats,
    prune_tol: f64,
}

impl Default for SparseState {
    fn default() -> Self {
        Self::new()
    }
}

impl SparseState {
    /// The empty-register state with one branch of amplitude 1.
    pub fn new() -> Self {
        SparseState {
            stride: 1,
            values: vec![0],
            amps: vec![Complex64::new(1.0, 0.0)],
            registers: Vec::new(),
            free_slots: vec![0],
            stack: Vec::new(),
            next_id: 0,
            canonical: true,
            working_qubits: 0,
            stats: ResourceStats::default(),
            prune_tol: DEFAULT_PRUNE_TOL,
        }
    }

    pub fn prune_tol(&self) -> f64 {
        self.prune_tol
    }

    pub fn set_prune_tol(&mut self, tol: f64) {
        self.prune_tol = tol;
    }

    pub fn branch_count(&self) -> usize {
        self.amps.len()
    }

    pub fn register_count(&self) -> usize {
        self.registers.len()
    }

    /// Live registers in allocation order.
    pub fn registers(&self) -> impl Iterator<Item = Register> + '_ {
        self.registers.iter().map(|m| m.reg)
    }

    pub fn name(&self, reg: Register) -> Result<&str> {
        self.meta(reg).map(|m| m.name.as_str())
    }

    pub fn stack_depth(&self) -> usize {
        self.stack.len()
    }

    pub fn resources(&self) -> ResourceStats {
        self.stats
    }

    /// Qubits held right now by registers and garbage-stack slots.
    pub fn working_qubits(&self) -> u64 {
        self.working_qubits
    }

    pub fn norm(&self) -> f64 {
        exec::sum_norm_sqr(&self.amps)
    }

    pub fn alloc(&mut self, width: u32, kind: ValueKind, name: impl Into<String>) -> Result<Register> {
        if !(1..=64).contains(&width) {
            return Err(Error::WidthOutOfRange(width));
        }
        if kind == ValueKind::Bool && width != 1 {
            return Err(Error::InvalidParameter(format!(
                "boolean register must have width 1, got {width}"
            )));
        }
        let slot = self.take_slot();
        let reg = Register {
            id: self.next_id,
            width,
            kind,
        };
        self.next_id += 1;
        self.registers.push(RegisterMeta {
            reg,
            slot,
            name: name.into(),
        });
        // A zero column appended last keeps the canonical order intact.
        self.working_qubits += u64::from(width);
        self.update_usage();
        Ok(reg)
    }

    pub fn free(&mut self, reg: Register) -> Result<()> {
        let idx = self.index_of(reg)?;
        let slot = self.registers[idx].slot;
        if exec::any_row(&self.values, self.stride, |row| row[slot] != 0) {
            return Err(Error::NonZeroAncilla(self.registers[idx].name.clone()));
        }
        self.registers.remove(idx);
        self.free_slots.push(slot);
        self.working_qubits -= u64::from(reg.width);
        Ok(())
    }

    /// Moves the register's value onto the garbage stack; the register reads 0
    /// afterwards.
    pub fn push_garbage(&mut self, reg: Register) -> Result<()> {
        let src = self.slot(reg)?;
        let dst = self.take_slot();
        exec::for_each_row(&mut self.values, self.stride, |row| {
            row[dst] = row[src];
            row[src] = 0;
        });
        self.stack.push(StackEntry {
            slot: dst,
            width: reg.width,
        });
        self.working_qubits += u64::from(reg.width);
        // Zeroing a register can reorder branches.
        self.canonical = false;
        self.update_usage();
        self.record_op();
        Ok(())
    }

    /// Restores the most recent push into `reg`, which must read 0.
    pub fn pop_garbage(&mut self, reg: Register) -> Result<()> {
        let dst = self.slot(reg)?;
        let top = *self.stack.last().ok_or(Error::StackEmpty)?;
        if top.width != reg.width {
            return Err(Error::StackWidthMismatch {
                stack: top.width,
                register: reg.width,
            });
        }
        if exec::any_row(&self.values, self.stride, |row| row[dst] != 0) {
            return Err(Error::PopIntoNonZero(self.name(reg)?.to_string()));
        }
        exec::for_each_row(&mut self.values, self.stride, |row| {
            row[dst] = row[top.slot];
            row[top.slot] = 0;
        });
        self.stack.pop();
        self.free_slots.push(top.slot);
        self.working_qubits -= u64::from(top.width);
        self.canonical = false;
        self.record_op();
        Ok(())
    }

    /// Replaces the branch table. `branches` give register values in
    /// allocation order. Values must fit their registers and be unique.
    pub fn load_branches(&mut self, branches: Vec<(Vec<u64>, Complex64)>) -> Result<()> {
        if !self.stack.is_empty() {
            return Err(Error::InvalidParameter("cannot load branches while the garbage stack is in use".into()));
        }
        let k = self.registers.len();
        let mut values = vec![0u64; branches.len() * self.stride];
        let mut amps = Vec::with_capacity(branches.len());
        for (b, (vals, amp)) in branches.into_iter().enumerate() {
            if vals.len() != k {
                return Err(Error::LayoutMismatch);
            }
            for (meta, v) in self.registers.iter().zip(vals) {
                if v & !meta.reg.mask() != 0 {
                    return Err(Error::ValueOverflow {
                        name: meta.name.clone(),
                        width: meta.reg.width,
                        value: v,
                    });
                }
                values[b * self.stride + meta.slot] = v;
            }
            amps.push(amp);
        }
        self.values = values;
        self.amps = amps;
        self.canonical = false;
        self.canonicalize();
        let order = self.canonical_slots();
        let stride = self.stride;
        for b in 1..self.amps.len() {
            let (prev, cur) = (&self.values[(b - 1) * stride..b * stride], &self.values[b * stride..(b + 1) * stride]);
            if compare_rows(prev, cur, &order) == Ordering::Equal {
                return Err(Error::InvalidParameter("duplicate branch in load_branches".into()));
            }
        }
        self.record_op();
        Ok(())
    }

    /// Prepares `Σ_v amps[v] |v⟩` in `reg` on top of the single all-zero
    /// branch. Zero amplitudes are skipped.
    pub fn load_register(&mut self, reg: Register, amps: &[(u64, Complex64)]) -> Result<()> {
        let idx = self.index_of(reg)?;
        let k = self.registers.len();
        let branches = amps
            .iter()
            .filter(|(_, a)| a.norm() > 0.0)
            .map(|&(v, a)| {
                let mut vals = vec![0u64; k];
                vals[idx] = v;
                (vals, a)
            })
            .collect();
        self.load_branches(branches)
    }

    /// Sorts branches lexicographically by register values in allocation order.
    pub fn canonicalize(&mut self) {
        if self.canonical {
            return;
        }
        let order = self.canonical_slots();
        self.sort_by_slots(&order);
        self.canonical = true;
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    /// Canonically ordered snapshot of all branches, values in allocation order.
    pub fn branches(&mut self) -> Vec<(Vec<u64>, Complex64)> {
        self.canonicalize();
        let slots: Vec<usize> = self.registers.iter().map(|m| m.slot).collect();
        self.values
            .chunks(self.stride)
            .zip(&self.amps)
            .map(|(row, &a)| (slots.iter().map(|&s| row[s]).collect(), a))
            .collect()
    }

    /// Amplitude of the branch whose registers hold exactly `values`
    /// (allocation order), or zero.
    pub fn amplitude_of(&mut self, values: &[u64]) -> Complex64 {
        self.canonicalize();
        let slots = self.canonical_slots();
        if values.len() != slots.len() {
            return Complex64::new(0.0, 0.0);
        }
        let stride = self.stride;
        let m = self.amps.len();
        let (mut lo, mut hi) = (0usize, m);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let row = &self.values[mid * stride..(mid + 1) * stride];
            let ord = slots
                .iter()
                .zip(values)
                .map(|(&s, v)| row[s].cmp(v))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal);
            match ord {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return self.amps[mid],
            }
        }
        Complex64::new(0.0, 0.0)
    }

    /// Per-branch values of one register, in the current branch order.
    pub fn column(&self, reg: Register) -> Result<Vec<u64>> {
        let slot = self.slot(reg)?;
        Ok(self.values.chunks(self.stride).map(|row| row[slot]).collect())
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Human-readable dump, one canonical branch per line:
    /// `name=<hex> ... amp=<re>,<im>`.
    pub fn dump(&mut self) -> String {
        let names: Vec<String> = self.registers.iter().map(|m| m.name.clone()).collect();
        let mut out = String::new();
        for (vals, amp) in self.branches() {
            for (name, v) in names.iter().zip(vals) {
                out.push_str(&format!("{name}={v:x} "));
            }
            out.push_str(&format!("amp={},{}\n", amp.re, amp.im));
        }
        out
    }

    /// Same registers (ids, widths, kinds, order) as `other`.
    pub fn same_layout(&self, other: &SparseState) -> bool {
        self.registers.len() == other.registers.len()
            && self
                .registers
                .iter()
                .zip(&other.registers)
                .all(|(a, b)| a.reg == b.reg)
    }

    /// A copy with the same registers but no branches.
    pub fn empty_like(&self) -> SparseState {
        let mut out = self.clone();
        out.values.clear();
        out.amps.clear();
        out.canonical = true;
        out
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scale(&mut self, factor: Complex64) {
        for a in &mut self.amps {
            *a *= factor;
        }
    }

    /// `self += factor * other`, merging branches with identical register
    /// values and dropping those that cancel below the pruning threshold.
    pub fn add_scaled(&mut self, other: &mut SparseState, factor: Complex64) -> Result<()> {
        if !self.same_layout(other) || !self.stack.is_empty() || !other.stack.is_empty() {
            return Err(Error::LayoutMismatch);
        }
        self.canonicalize();
        other.canonicalize();
        let a_slots = self.canonical_slots();
        let b_slots = other.canonical_slots();
        let k = a_slots.len();
        let (sa, sb) = (self.stride, other.stride);
        let (ma, mb) = (self.amps.len(), other.amps.len());
        let mut values = Vec::with_capacity((ma + mb) * sa);
        let mut amps = Vec::with_capacity(ma + mb);
        let tol = self.prune_tol;
        let (mut i, mut j) = (0usize, 0usize);
        let row_b = |j: usize| -> Vec<u64> {
            let mut r = vec![0u64; sa];
            let src = &other.values[j * sb..(j + 1) * sb];
            for c in 0..k {
                r[a_slots[c]] = src[b_slots[c]];
            }
            r
        };
        while i < ma || j < mb {
            let ord = if i == ma {
                Ordering::Greater
            } else if j == mb {
                Ordering::Less
            } else {
                let ra = &self.values[i * sa..(i + 1) * sa];
                let rb = &other.values[j * sb..(j + 1) * sb];
                (0..k)
                    .map(|c| ra[a_slots[c]].cmp(&rb[b_slots[c]]))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            };
            match ord {
                Ordering::Less => {
                    values.extend_from_slice(&self.values[i * sa..(i + 1) * sa]);
                    amps.push(self.amps[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    let amp = other.amps[j] * factor;
                    if amp.norm() > tol {
                        values.extend(row_b(j));
                        amps.push(amp);
                    }
                    j += 1;
                }
                Ordering::Equal => {
                    let amp = self.amps[i] + other.amps[j] * factor;
                    if amp.norm() > tol {
                        values.extend_from_slice(&self.values[i * sa..(i + 1) * sa]);
                        amps.push(amp);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        self.values = values;
        self.amps = amps;
        self.record_op();
        Ok(())
    }

    /// Drops branches with `|amplitude| <= tol`.
    pub fn prune(&mut self, tol: f64) {
        let stride = self.stride;
        let mut w = 0usize;
        for b in 0..self.amps.len() {
            if self.amps[b].norm() > tol {
                if w != b {
                    self.amps[w] = self.amps[b];
                    self.values.copy_within(b * stride..(b + 1) * stride, w * stride);
                }
                w += 1;
            }
        }
        self.amps.truncate(w);
        self.values.truncate(w * stride);
    }

    // ---- crate-internal plumbing ----------------------------------------

    fn index_of(&self, reg: Register) -> Result<usize> {
        self.registers
            .iter()
            .position(|m| m.reg.id == reg.id)
            .filter(|&i| self.registers[i].reg == reg)
            .ok_or(Error::UnknownRegister(reg.id))
    }

    fn meta(&self, reg: Register) -> Result<&RegisterMeta> {
        self.index_of(reg).map(|i| &self.registers[i])
    }

    pub(crate) fn slot(&self, reg: Register) -> Result<usize> {
        self.meta(reg).map(|m| m.slot)
    }

    pub(crate) fn stride(&self) -> usize {
        self.stride
    }

    pub(crate) fn values(&self) -> &[u64] {
        &self.values
    }

    /// Register slots in allocation order, then garbage-stack slots bottom to
    /// top, so that the induced order is total.
    pub(crate) fn canonical_slots(&self) -> Vec<usize> {
        self.registers
            .iter()
            .map(|m| m.slot)
            .chain(self.stack.iter().map(|e| e.slot))
            .collect()
    }

    pub(crate) fn table_mut(&mut self) -> (&mut [u64], usize, &mut [Complex64]) {
        (&mut self.values, self.stride, &mut self.amps)
    }

    /// Marks the branch order as possibly non-canonical after a pass that
    /// rewrote register values.
    pub(crate) fn touch(&mut self) {
        self.canonical = false;
    }

    pub(crate) fn replace_table(&mut self, values: Vec<u64>, amps: Vec<Complex64>) {
        debug_assert_eq!(values.len(), amps.len() * self.stride);
        self.values = values;
        self.amps = amps;
        self.canonical = false;
    }

    pub(crate) fn record_op(&mut self) {
        self.stats.op_count += 1;
        self.stats.max_branches = self.stats.max_branches.max(self.amps.len());
    }

    pub(crate) fn record_qram_query(&mut self) {
        self.stats.qram_queries += 1;
    }

    /// Sorts branches by the given slot priority (ties broken by the remaining
    /// canonical slots so the order is total).
    pub(crate) fn sort_by_slots(&mut self, order: &[usize]) {
        let stride = self.stride;
        let m = self.amps.len();
        let mut idx: Vec<usize> = (0..m).collect();
        {
            let values = &self.values;
            exec::sort_indices_by(&mut idx, |&a, &b| {
                compare_rows(&values[a * stride..(a + 1) * stride], &values[b * stride..(b + 1) * stride], order)
            });
        }
        if idx.iter().enumerate().all(|(i, &j)| i == j) {
            return;
        }
        let mut values = Vec::with_capacity(self.values.len());
        let mut amps = Vec::with_capacity(m);
        for &i in &idx {
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
            amps.push(self.amps[i]);
        }
        self.values = values;
        self.amps = amps;
        self.canonical = false;
    }

    fn take_slot(&mut self) -> usize {
        if let Some(s) = self.free_slots.pop() {
            return s;
        }
        let old = self.stride;
        let new = (old * 2).max(4);
        let m = self.amps.len();
        let mut values = vec![0u64; m * new];
        for b in 0..m {
            values[b * new..b * new + old].copy_from_slice(&self.values[b * old..(b + 1) * old]);
        }
        self.values = values;
        self.stride = new;
        // Hand out the lowest new slot first.
        self.free_slots.extend((old + 1..new).rev());
        old
    }

    fn update_usage(&mut self) {
        let regs = self.registers.len() + self.stack.len();
        self.stats.max_working_registers = self.stats.max_working_registers.max(regs);
        self.stats.max_working_qubits = self.stats.max_working_qubits.max(self.working_qubits);
    }
}

pub(crate) fn compare_rows(a: &[u64], b: &[u64], order: &[usize]) -> Ordering {
    for &s in order {
        match a[s].cmp(&b[s]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}
