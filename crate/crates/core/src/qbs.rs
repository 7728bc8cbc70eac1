//! Quantum binary search over a sorted window of QRAM words.
//!
//! The loop runs a fixed number of iterations on every branch. A `flag`
//! register marks branches that are still searching; each iteration pushes its
//! temporaries onto the garbage stack, and the uncompute pass pops them back
//! in reverse, so only the output register changes.

use crate::error::{Error, Result};
use crate::semiquantum::{
    compare_equal_ctrl, compare_less_ctrl, flip_ctrl, qram_query_ctrl, swap_registers_ctrl, xor_out_of_place,
    xor_out_of_place_ctrl, Control, QramImage,
};
use crate::state::{Register, SparseState, ValueKind};

/// Registers and parameters of one search.
#[derive(Clone, Copy, Debug)]
pub struct QbsContext {
    /// Absolute address of the first word of the window.
    pub offset: Register,
    /// Value searched for.
    pub target: Register,
    /// Receives `output ⊕ index`.
    pub output: Register,
    /// Window length; a power of two.
    pub sparsity: u64,
    /// XOR the absolute address instead of the window-relative position.
    pub absolute_index: bool,
    /// Reject branches whose window is not strictly increasing.
    pub check_sorted: bool,
}

impl QbsContext {
    pub fn new(offset: Register, target: Register, output: Register, sparsity: u64) -> Self {
        QbsContext {
            offset,
            target,
            output,
            sparsity,
            absolute_index: false,
            check_sorted: true,
        }
    }
}

/// Iterations needed to reach every position of a window of `s` words.
pub fn loop_count(s: u64) -> u32 {
    s.trailing_zeros() + 1
}

/// Fixed-iteration binary search: `(position, true)` when `target` is found,
/// `(0, false)` otherwise. `list.len()` must be a power of two.
pub fn classical_binary_search(list: &[u64], target: u64) -> (usize, bool) {
    let (mut left, mut right) = (0usize, list.len());
    for _ in 0..loop_count(list.len() as u64) {
        let mid = (left + right) / 2;
        let Some(&v) = list.get(mid) else { break };
        if v == target {
            return (mid, true);
        }
        if v < target {
            left = mid;
        } else {
            right = mid;
        }
    }
    (0, false)
}

struct Ancillae {
    left: Register,
    right: Register,
    mid: Register,
    mid_val: Register,
    flag: Register,
    less: Register,
    equal: Register,
}

/// `output ← output ⊕ i(target)` where `i` is the position of `target` in
/// the window `image[offset .. offset + s)`, or 0 when it is absent.
pub fn qbs(state: &mut SparseState, image: &QramImage, ctx: &QbsContext) -> Result<()> {
    let s = ctx.sparsity;
    if s == 0 || !s.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("sparsity {s} is not a power of two")));
    }
    for r in [ctx.offset, ctx.target, ctx.output] {
        if r.kind() != ValueKind::Unsigned {
            return Err(Error::TypeMismatch {
                name: state.name(r)?.to_string(),
                found: r.kind().to_string(),
                expected: "an unsigned register",
            });
        }
    }
    if ctx.check_sorted {
        check_windows(state, image, ctx)?;
    }

    let aw = image.address_width();
    let anc = Ancillae {
        left: state.alloc(aw, ValueKind::Unsigned, "qbs.left")?,
        right: state.alloc(aw, ValueKind::Unsigned, "qbs.right")?,
        mid: state.alloc(aw, ValueKind::Unsigned, "qbs.mid")?,
        mid_val: state.alloc(ctx.target.width(), ValueKind::Unsigned, "qbs.midVal")?,
        flag: state.alloc(1, ValueKind::Bool, "qbs.flag")?,
        less: state.alloc(1, ValueKind::Bool, "qbs.less")?,
        equal: state.alloc(1, ValueKind::Bool, "qbs.equal")?,
    };
    let iterations = loop_count(s);

    // Set up the window and the search flag.
    xor_out_of_place(state, |v| v[0], &[ctx.offset], anc.left)?;
    xor_out_of_place(state, move |v| v[0] + s, &[ctx.offset], anc.right)?;
    flip_ctrl(state, anc.flag, &[])?;

    for _ in 0..iterations {
        iteration(state, image, ctx, &anc, true)?;
        for r in [anc.mid, anc.mid_val, anc.less, anc.equal] {
            state.push_garbage(r)?;
        }
    }
    for _ in 0..iterations {
        for r in [anc.equal, anc.less, anc.mid_val, anc.mid] {
            state.pop_garbage(r)?;
        }
        iteration(state, image, ctx, &anc, false)?;
    }

    flip_ctrl(state, anc.flag, &[])?;
    xor_out_of_place(state, move |v| v[0] + s, &[ctx.offset], anc.right)?;
    xor_out_of_place(state, |v| v[0], &[ctx.offset], anc.left)?;
    for r in [anc.equal, anc.less, anc.flag, anc.mid_val, anc.mid, anc.right, anc.left] {
        state.free(r)?;
    }
    Ok(())
}

/// One loop body, or its inverse without the output step.
fn iteration(state: &mut SparseState, image: &QramImage, ctx: &QbsContext, a: &Ancillae, forward: bool) -> Result<()> {
    let searching = [Control::on(a.flag)];
    let moving = [Control::on(a.flag), Control::on(a.less)];
    let steps: [&dyn Fn(&mut SparseState) -> Result<()>; 6] = [
        &|st| xor_out_of_place_ctrl(st, |v| (v[0] + v[1]) >> 1, &[a.left, a.right], a.mid, &searching),
        &|st| qram_query_ctrl(st, image, a.mid, a.mid_val, &searching),
        &|st| {
            compare_less_ctrl(st, a.mid_val, ctx.target, a.less, &searching)?;
            compare_equal_ctrl(st, a.mid_val, ctx.target, a.equal, &searching)
        },
        &|st| flip_ctrl(st, a.flag, &[Control::on(a.equal)]),
        &|st| swap_registers_ctrl(st, a.mid, a.left, &moving),
        &|st| {
            flip_ctrl(st, a.less, &searching)?;
            swap_registers_ctrl(st, a.mid, a.right, &moving)
        },
    ];
    if forward {
        steps[0](state)?;
        steps[1](state)?;
        steps[2](state)?;
        if ctx.absolute_index {
            xor_out_of_place_ctrl(state, |v| v[0], &[a.mid], ctx.output, &[Control::on(a.equal)])?;
        } else {
            xor_out_of_place_ctrl(
                state,
                |v| v[0].wrapping_sub(v[1]),
                &[a.mid, ctx.offset],
                ctx.output,
                &[Control::on(a.equal)],
            )?;
        }
        for step in &steps[3..] {
            step(state)?;
        }
    } else {
        // The last step is swap-after-flip; undo it as unswap-then-unflip.
        swap_registers_ctrl(state, a.mid, a.right, &moving)?;
        flip_ctrl(state, a.less, &searching)?;
        for step in steps[..5].iter().rev() {
            step(state)?;
        }
    }
    Ok(())
}

fn check_windows(state: &SparseState, image: &QramImage, ctx: &QbsContext) -> Result<()> {
    let slot = state.slot(ctx.offset)?;
    let stride = state.stride();
    let mut seen = std::collections::BTreeSet::new();
    for row in state.values().chunks(stride) {
        let off = row[slot];
        if !seen.insert(off) {
            continue;
        }
        let window: Vec<u64> = (0..ctx.sparsity).map(|i| image.read(off + i)).collect();
        if window.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedWindow { offset: off });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::seq::index::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    struct Setup {
        st: SparseState,
        ctx: QbsContext,
    }

    fn setup(n: u32) -> Setup {
        let mut st = SparseState::new();
        let offset = st.alloc(8, ValueKind::Unsigned, "offset").unwrap();
        let target = st.alloc(n, ValueKind::Unsigned, "target").unwrap();
        let output = st.alloc(n, ValueKind::Unsigned, "output").unwrap();
        Setup {
            st,
            ctx: QbsContext::new(offset, target, output, 4),
        }
    }

    fn offset_window() -> QramImage {
        // Window at offset 4, preceded by unrelated words.
        QramImage::new(vec![9, 9, 9, 9, 2, 5, 8, 10], 8, 4).unwrap()
    }

    #[test]
    fn classical_examples() {
        assert_eq!(classical_binary_search(&[2, 5, 8, 10], 8), (2, true));
        assert_eq!(classical_binary_search(&[2, 5, 8, 10], 3), (0, false));
        assert_eq!(classical_binary_search(&[7], 7), (0, true));
        for (i, &v) in [2u64, 5, 8, 10].iter().enumerate() {
            assert_eq!(classical_binary_search(&[2, 5, 8, 10], v), (i, true));
        }
    }

    #[test]
    fn finds_entry_in_window() {
        let Setup { mut st, ctx } = setup(4);
        let image = offset_window();
        st.load_branches(vec![(vec![4, 8, 0], c(1.0))]).unwrap();
        qbs(&mut st, &image, &ctx).unwrap();
        assert_eq!(st.branches(), vec![(vec![4, 8, 2], c(1.0))]);
        qbs(&mut st, &image, &ctx).unwrap();
        assert_eq!(st.branches(), vec![(vec![4, 8, 0], c(1.0))]);
        assert_eq!(st.register_count(), 3);
        assert_eq!(st.stack_depth(), 0);
    }

    #[test]
    fn absent_target_gives_zero() {
        let Setup { mut st, ctx } = setup(4);
        st.load_branches(vec![(vec![4, 3, 0], c(1.0))]).unwrap();
        qbs(&mut st, &offset_window(), &ctx).unwrap();
        assert_eq!(st.branches(), vec![(vec![4, 3, 0], c(1.0))]);
    }

    #[test]
    fn absolute_index_variant() {
        let Setup { mut st, mut ctx } = setup(4);
        ctx.absolute_index = true;
        st.load_branches(vec![(vec![4, 10, 0], c(1.0))]).unwrap();
        qbs(&mut st, &offset_window(), &ctx).unwrap();
        assert_eq!(st.branches(), vec![(vec![4, 10, 7], c(1.0))]);
    }

    #[test]
    fn superposed_targets_and_query_count() {
        let Setup { mut st, ctx } = setup(4);
        let image = offset_window();
        let branches: Vec<_> = (0..16u64).map(|t| (vec![4, t, 0], c(0.25))).collect();
        st.load_branches(branches).unwrap();
        let before = st.resources().qram_queries;
        qbs(&mut st, &image, &ctx).unwrap();
        assert_eq!(st.resources().qram_queries - before, 2 * u64::from(loop_count(4)));
        assert_eq!(st.branch_count(), 16);
        let list = [2, 5, 8, 10];
        for (vals, _) in st.branches() {
            assert_eq!(vals[2], classical_binary_search(&list, vals[1]).0 as u64);
        }
    }

    #[test]
    fn unsorted_window_is_rejected() {
        let Setup { mut st, ctx } = setup(4);
        let image = QramImage::new(vec![2, 8, 5, 10], 8, 4).unwrap();
        st.load_branches(vec![(vec![0, 8, 0], c(1.0))]).unwrap();
        assert_eq!(qbs(&mut st, &image, &ctx), Err(Error::UnsortedWindow { offset: 0 }));
        assert_eq!(st.branches(), vec![(vec![0, 8, 0], c(1.0))]);
    }

    #[test]
    fn random_windows_against_classical_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for log_s in 1..=4u32 {
            let s = 1u64 << log_s;
            let n = log_s + 2;
            for _ in 0..5 {
                let mut window: Vec<u64> = sample(&mut rng, 1 << n, s as usize).into_iter().map(|x| x as u64).collect();
                window.sort_unstable();
                let mut words = vec![0u64; 3];
                words.extend(&window);
                let image = QramImage::new(words, 8, n).unwrap();
                let mut st = SparseState::new();
                let offset = st.alloc(8, ValueKind::Unsigned, "offset").unwrap();
                let target = st.alloc(n, ValueKind::Unsigned, "target").unwrap();
                let output = st.alloc(n, ValueKind::Unsigned, "output").unwrap();
                let amp = c(1.0 / f64::from(1u32 << n).sqrt());
                st.load_branches((0..1u64 << n).map(|t| (vec![3, t, 0], amp)).collect()).unwrap();
                let ctx = QbsContext::new(offset, target, output, s);
                qbs(&mut st, &image, &ctx).unwrap();
                for (vals, _) in st.branches() {
                    assert_eq!(vals[2], classical_binary_search(&window, vals[1]).0 as u64);
                }
            }
        }
    }
}
