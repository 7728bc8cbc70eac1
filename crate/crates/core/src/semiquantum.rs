//! Semi-quantum operations: reversible maps applied to every branch
//! independently. None of them changes the number of branches.
//!
//! Out-of-place maps follow the XOR protocol `|x⟩|z⟩ → |x⟩|z ⊕ f(x)⟩`, which is
//! an involution for any classical `f`. In-place maps are built from a forward
//! function and its inverse and are rejected when they fail to be injective on
//! the branches present. Integer arithmetic wraps modulo `2^width`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::state::{width_mask, Register, SparseState, ValueKind};

/// Register-equality condition: the controlled operation only acts on branches
/// where `reg` holds `value`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Control {
    pub reg: Register,
    pub value: u64,
}

impl Control {
    pub fn new(reg: Register, value: u64) -> Self {
        Control { reg, value }
    }

    /// Shorthand for `Control::new(flag, 1)`.
    pub fn on(flag: Register) -> Self {
        Control::new(flag, 1)
    }
}

type SlotControls = Vec<(usize, u64)>;

fn resolve_controls(state: &SparseState, controls: &[Control]) -> Result<SlotControls> {
    controls
        .iter()
        .map(|c| {
            if c.value & !c.reg.mask() != 0 {
                return Err(Error::ValueOverflow {
                    name: state.name(c.reg)?.to_string(),
                    width: c.reg.width(),
                    value: c.value,
                });
            }
            Ok((state.slot(c.reg)?, c.value))
        })
        .collect()
}

#[inline]
fn controls_hold(row: &[u64], controls: &[(usize, u64)]) -> bool {
    controls.iter().all(|&(s, v)| row[s] == v)
}

fn expect_kind(state: &SparseState, reg: Register, ok: bool, expected: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::TypeMismatch {
            name: state.name(reg)?.to_string(),
            found: reg.kind().to_string(),
            expected,
        })
    }
}

fn expect_integer(state: &SparseState, reg: Register) -> Result<()> {
    expect_kind(state, reg, reg.kind().is_integer(), "an integer register")
}

fn expect_bool(state: &SparseState, reg: Register) -> Result<()> {
    expect_kind(state, reg, reg.kind() == ValueKind::Bool, "a boolean register")
}

fn check_distinct(state: &SparseState, output: Register, inputs: &[Register]) -> Result<()> {
    if inputs.iter().any(|r| r.id() == output.id()) {
        return Err(Error::AliasedOutput(state.name(output)?.to_string()));
    }
    Ok(())
}

/// Reads a register value as a signed integer when the register is signed.
#[inline]
fn as_i128(value: u64, reg_width: u32, kind: ValueKind) -> i128 {
    if kind == ValueKind::Signed && reg_width < 64 && value >> (reg_width - 1) & 1 == 1 {
        value as i128 - (1i128 << reg_width)
    } else if kind == ValueKind::Signed && reg_width == 64 {
        value as i64 as i128
    } else {
        value as i128
    }
}

const MAX_INPUTS: usize = 8;

/// A general branch-wise map on a set of registers.
///
/// `mapping` receives the touched registers' values in `touched` order and
/// rewrites them in place. It must be a bijection on the joint values; this is
/// the caller's contract (tests check it exhaustively for small widths).
pub struct SemiQuantumSpec<'a> {
    pub touched: Vec<Register>,
    pub controls: Vec<Control>,
    pub mapping: Box<dyn Fn(&mut [u64]) + Sync + Send + 'a>,
}

/// Applies a [`SemiQuantumSpec`]. On a width overflow nothing is modified.
pub fn apply_semi_quantum(state: &mut SparseState, spec: &SemiQuantumSpec<'_>) -> Result<()> {
    let t = spec.touched.len();
    if t > MAX_INPUTS {
        return Err(Error::InvalidParameter(format!("at most {MAX_INPUTS} touched registers")));
    }
    let slots: Vec<usize> = spec.touched.iter().map(|r| state.slot(*r)).collect::<Result<_>>()?;
    let masks: Vec<u64> = spec.touched.iter().map(|r| r.mask()).collect();
    let controls = resolve_controls(state, &spec.controls)?;
    let stride = state.stride();

    // First pass only validates so a failing map leaves the state untouched.
    let overflow = exec::try_for_each_row(state.values(), stride, |row| {
        if !controls_hold(row, &controls) {
            return Ok(());
        }
        let mut buf = [0u64; MAX_INPUTS];
        for i in 0..t {
            buf[i] = row[slots[i]];
        }
        (spec.mapping)(&mut buf[..t]);
        for i in 0..t {
            if buf[i] & !masks[i] != 0 {
                return Err((i, buf[i]));
            }
        }
        Ok(())
    });
    if let Err((i, value)) = overflow {
        let reg = spec.touched[i];
        return Err(Error::ValueOverflow {
            name: state.name(reg)?.to_string(),
            width: reg.width(),
            value,
        });
    }

    let (values, stride, _) = state.table_mut();
    exec::for_each_row(values, stride, |row| {
        if !controls_hold(row, &controls) {
            return;
        }
        let mut buf = [0u64; MAX_INPUTS];
        for i in 0..t {
            buf[i] = row[slots[i]];
        }
        (spec.mapping)(&mut buf[..t]);
        for i in 0..t {
            row[slots[i]] = buf[i];
        }
    });
    state.touch();
    state.record_op();
    Ok(())
}

/// `output ← output ⊕ f(inputs)` on every branch; the result of `f` is reduced
/// modulo `2^width(output)`.
pub fn xor_out_of_place<F>(state: &mut SparseState, f: F, inputs: &[Register], output: Register) -> Result<()>
where
    F: Fn(&[u64]) -> u64 + Sync + Send,
{
    xor_out_of_place_ctrl(state, f, inputs, output, &[])
}

pub fn xor_out_of_place_ctrl<F>(
    state: &mut SparseState,
    f: F,
    inputs: &[Register],
    output: Register,
    controls: &[Control],
) -> Result<()>
where
    F: Fn(&[u64]) -> u64 + Sync + Send,
{
    check_distinct(state, output, inputs)?;
    if inputs.len() > MAX_INPUTS {
        return Err(Error::InvalidParameter(format!("at most {MAX_INPUTS} inputs")));
    }
    let in_slots: Vec<usize> = inputs.iter().map(|r| state.slot(*r)).collect::<Result<_>>()?;
    let out = state.slot(output)?;
    let mask = output.mask();
    let controls = resolve_controls(state, controls)?;
    let n = in_slots.len();
    let (values, stride, _) = state.table_mut();
    exec::for_each_row(values, stride, |row| {
        if !controls_hold(row, &controls) {
            return;
        }
        let mut buf = [0u64; MAX_INPUTS];
        for i in 0..n {
            buf[i] = row[in_slots[i]];
        }
        row[out] ^= f(&buf[..n]) & mask;
    });
    state.touch();
    state.record_op();
    Ok(())
}

/// `target ← f(target, params)` in place, realised as the forward/inverse
/// pair. Every affected branch must satisfy `f_inv(f(t, p), p) = t`, otherwise
/// [`Error::NonInjective`] is returned and the state is left untouched.
pub fn in_place_via_inverse_pair<F, G>(
    state: &mut SparseState,
    f: F,
    f_inv: G,
    target: Register,
    params: &[Register],
    controls: &[Control],
) -> Result<()>
where
    F: Fn(u64, &[u64]) -> u64 + Sync + Send,
    G: Fn(u64, &[u64]) -> u64 + Sync + Send,
{
    check_distinct(state, target, params)?;
    if params.len() > MAX_INPUTS {
        return Err(Error::InvalidParameter(format!("at most {MAX_INPUTS} parameters")));
    }
    let p_slots: Vec<usize> = params.iter().map(|r| state.slot(*r)).collect::<Result<_>>()?;
    let t_slot = state.slot(target)?;
    let mask = target.mask();
    let controls = resolve_controls(state, controls)?;
    let n = p_slots.len();
    let stride = state.stride();
    let gather = |row: &[u64]| {
        let mut buf = [0u64; MAX_INPUTS];
        for i in 0..n {
            buf[i] = row[p_slots[i]];
        }
        buf
    };

    let check = exec::try_for_each_row(state.values(), stride, |row| {
        if !controls_hold(row, &controls) {
            return Ok(());
        }
        let p = gather(row);
        let t = row[t_slot];
        let y = f(t, &p[..n]) & mask;
        if f_inv(y, &p[..n]) & mask != t {
            return Err(());
        }
        Ok(())
    });
    if check.is_err() {
        return Err(Error::NonInjective(state.name(target)?.to_string()));
    }

    let (values, stride, _) = state.table_mut();
    exec::for_each_row(values, stride, |row| {
        if !controls_hold(row, &controls) {
            return;
        }
        let p = gather(row);
        row[t_slot] = f(row[t_slot], &p[..n]) & mask;
    });
    state.touch();
    state.record_op();
    Ok(())
}

/// Exchanges the values of two equal-width registers.
pub fn swap_registers(state: &mut SparseState, r1: Register, r2: Register) -> Result<()> {
    swap_registers_ctrl(state, r1, r2, &[])
}

pub fn swap_registers_ctrl(state: &mut SparseState, r1: Register, r2: Register, controls: &[Control]) -> Result<()> {
    if r1.width() != r2.width() {
        return Err(Error::WidthMismatch(r1.width(), r2.width()));
    }
    let (a, b) = (state.slot(r1)?, state.slot(r2)?);
    let controls = resolve_controls(state, controls)?;
    if a != b {
        let (values, stride, _) = state.table_mut();
        exec::for_each_row(values, stride, |row| {
            if controls_hold(row, &controls) {
                row.swap(a, b);
            }
        });
        state.touch();
    }
    state.record_op();
    Ok(())
}

/// Negates the amplitude of every branch where at least one of `regs` is
/// nonzero.
pub fn phase_flip_if_any_nonzero(state: &mut SparseState, regs: &[Register]) -> Result<()> {
    let slots: Vec<usize> = regs.iter().map(|r| state.slot(*r)).collect::<Result<_>>()?;
    let (values, stride, amps) = state.table_mut();
    exec::for_each_branch(values, stride, amps, |row, amp| {
        if slots.iter().any(|&s| row[s] != 0) {
            *amp = -*amp;
        }
    });
    state.record_op();
    Ok(())
}

/// Multiplies the amplitude of branches matching all `controls` by `phase`.
pub fn controlled_phase(state: &mut SparseState, phase: Complex64, controls: &[Control]) -> Result<()> {
    let controls = resolve_controls(state, controls)?;
    let (values, stride, amps) = state.table_mut();
    exec::for_each_branch(values, stride, amps, |row, amp| {
        if controls_hold(row, &controls) {
            *amp *= phase;
        }
    });
    state.record_op();
    Ok(())
}

// ---- QRAM -------------------------------------------------------------------

/// Classical word memory queried coherently by [`qram_query`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QramImage {
    words: Vec<u64>,
    address_width: u32,
    word_width: u32,
}

impl QramImage {
    pub fn new(words: Vec<u64>, address_width: u32, word_width: u32) -> Result<Self> {
        if !(1..=64).contains(&word_width) || !(1..=63).contains(&address_width) {
            return Err(Error::InvalidParameter(format!(
                "QRAM widths out of range: address {address_width}, word {word_width}"
            )));
        }
        if words.len() as u128 > 1u128 << address_width {
            return Err(Error::InvalidParameter(format!(
                "{} words do not fit a {address_width}-bit address space",
                words.len()
            )));
        }
        let mask = width_mask(word_width);
        if let Some(w) = words.iter().find(|&&w| w & !mask != 0) {
            return Err(Error::InvalidParameter(format!("word {w} exceeds {word_width} bits")));
        }
        Ok(QramImage {
            words,
            address_width,
            word_width,
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn address_width(&self) -> u32 {
        self.address_width
    }

    pub fn word_width(&self) -> u32 {
        self.word_width
    }

    /// Word at `addr`; addresses past the stored words read 0.
    #[inline]
    pub fn read(&self, addr: u64) -> u64 {
        usize::try_from(addr)
            .ok()
            .and_then(|a| self.words.get(a))
            .copied()
            .unwrap_or(0)
    }

    /// Little-endian binary form: `address_width: u8`, `word_width: u8`,
    /// `count: u64`, then `count` 8-byte words.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&[self.address_width as u8, self.word_width as u8])?;
        w.write_all(&(self.words.len() as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut head = [0u8; 10];
        r.read_exact(&mut head)?;
        let count = u64::from_le_bytes(head[2..10].try_into().expect("8-byte slice"));
        let mut words = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            words.push(u64::from_le_bytes(buf));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "trailing bytes after QRAM words"));
        }
        QramImage::new(words, u32::from(head[0]), u32::from(head[1]))
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut bytes = Vec::with_capacity(10 + 8 * self.words.len());
        self.write_to(&mut bytes)?;
        fs::write(path, bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        QramImage::read_from(io::Cursor::new(fs::read(path)?))
    }
}

/// `data ← data ⊕ words[addr]` per branch. Words wider than the data register
/// are masked to its width; unmapped addresses read 0.
pub fn qram_query(state: &mut SparseState, image: &QramImage, addr: Register, data: Register) -> Result<()> {
    qram_query_ctrl(state, image, addr, data, &[])
}

pub fn qram_query_ctrl(
    state: &mut SparseState,
    image: &QramImage,
    addr: Register,
    data: Register,
    controls: &[Control],
) -> Result<()> {
    if addr.width() > image.address_width() {
        return Err(Error::WidthMismatch(addr.width(), image.address_width()));
    }
    if data.width() > image.word_width() {
        return Err(Error::WidthMismatch(data.width(), image.word_width()));
    }
    expect_kind(state, addr, addr.kind() == ValueKind::Unsigned, "an unsigned address register")?;
    expect_kind(state, data, data.kind() != ValueKind::Bool || image.word_width() == 1, "a data register")?;
    check_distinct(state, data, &[addr])?;
    let (a, d) = (state.slot(addr)?, state.slot(data)?);
    let mask = data.mask();
    let controls = resolve_controls(state, controls)?;
    let (values, stride, _) = state.table_mut();
    exec::for_each_row(values, stride, |row| {
        if controls_hold(row, &controls) {
            row[d] ^= image.read(row[a]) & mask;
        }
    });
    state.touch();
    state.record_op();
    state.record_qram_query();
    Ok(())
}

// ---- arithmetic catalog -------------------------------------------------------

/// `z ← z ⊕ (x1 + x2)`.
pub fn add(state: &mut SparseState, x1: Register, x2: Register, z: Register) -> Result<()> {
    for r in [x1, x2, z] {
        expect_integer(state, r)?;
    }
    xor_out_of_place(state, |v| v[0].wrapping_add(v[1]), &[x1, x2], z)
}

/// `z ← z ⊕ (x1 · x2)`.
pub fn mul(state: &mut SparseState, x1: Register, x2: Register, z: Register) -> Result<()> {
    for r in [x1, x2, z] {
        expect_integer(state, r)?;
    }
    xor_out_of_place(state, |v| v[0].wrapping_mul(v[1]), &[x1, x2], z)
}

/// `target ← target + addend (mod 2^width)`.
pub fn add_in_place(state: &mut SparseState, target: Register, addend: Register) -> Result<()> {
    expect_integer(state, target)?;
    expect_integer(state, addend)?;
    in_place_via_inverse_pair(
        state,
        |t, p| t.wrapping_add(p[0]),
        |y, p| y.wrapping_sub(p[0]),
        target,
        &[addend],
        &[],
    )
}

/// `target ← target + constant (mod 2^width)`.
pub fn add_const_in_place(state: &mut SparseState, target: Register, constant: u64) -> Result<()> {
    expect_integer(state, target)?;
    in_place_via_inverse_pair(
        state,
        move |t, _| t.wrapping_add(constant),
        move |y, _| y.wrapping_sub(constant),
        target,
        &[],
        &[],
    )
}

/// `target ← target · constant (mod 2^width)` for odd `constant`.
pub fn mul_const_in_place(state: &mut SparseState, target: Register, constant: u64) -> Result<()> {
    expect_integer(state, target)?;
    if constant.is_multiple_of(2) {
        return Err(Error::InvalidParameter("multiplier must be odd to be invertible".into()));
    }
    let inv = mod_inverse_pow2(constant);
    in_place_via_inverse_pair(
        state,
        move |t, _| t.wrapping_mul(constant),
        move |y, _| y.wrapping_mul(inv),
        target,
        &[],
        &[],
    )
}

/// Inverse of an odd number modulo 2^64 (Newton iteration).
fn mod_inverse_pow2(a: u64) -> u64 {
    let mut x = a;
    for _ in 0..6 {
        x = x.wrapping_mul(2u64.wrapping_sub(a.wrapping_mul(x)));
    }
    x
}

/// `out ← out ⊕ [a < b]`; signed registers compare as two's complement.
pub fn compare_less(state: &mut SparseState, a: Register, b: Register, out: Register) -> Result<()> {
    compare_less_ctrl(state, a, b, out, &[])
}

pub fn compare_less_ctrl(
    state: &mut SparseState,
    a: Register,
    b: Register,
    out: Register,
    controls: &[Control],
) -> Result<()> {
    expect_integer(state, a)?;
    expect_integer(state, b)?;
    expect_bool(state, out)?;
    let (wa, ka, wb, kb) = (a.width(), a.kind(), b.width(), b.kind());
    xor_out_of_place_ctrl(
        state,
        move |v| u64::from(as_i128(v[0], wa, ka) < as_i128(v[1], wb, kb)),
        &[a, b],
        out,
        controls,
    )
}

/// `out ← out ⊕ [a = b]`.
pub fn compare_equal(state: &mut SparseState, a: Register, b: Register, out: Register) -> Result<()> {
    compare_equal_ctrl(state, a, b, out, &[])
}

pub fn compare_equal_ctrl(
    state: &mut SparseState,
    a: Register,
    b: Register,
    out: Register,
    controls: &[Control],
) -> Result<()> {
    expect_integer(state, a)?;
    expect_integer(state, b)?;
    expect_bool(state, out)?;
    let (wa, ka, wb, kb) = (a.width(), a.kind(), b.width(), b.kind());
    xor_out_of_place_ctrl(
        state,
        move |v| u64::from(as_i128(v[0], wa, ka) == as_i128(v[1], wb, kb)),
        &[a, b],
        out,
        controls,
    )
}

/// Flips a boolean register where the controls hold.
pub fn flip_ctrl(state: &mut SparseState, flag: Register, controls: &[Control]) -> Result<()> {
    expect_bool(state, flag)?;
    xor_out_of_place_ctrl(state, |_| 1, &[], flag, controls)
}

/// `dst ← dst ⊕ src`.
pub fn xor_copy(state: &mut SparseState, src: Register, dst: Register) -> Result<()> {
    xor_out_of_place(state, |v| v[0], &[src], dst)
}
