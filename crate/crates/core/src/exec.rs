//! Branch-parallel execution helpers.
//!
//! With the `parallel` feature the passes run on the rayon pool; without it
//! they run in order. Both paths produce identical results because every pass
//! touches each branch independently.

use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many branches a pass is not worth splitting.
#[cfg(feature = "parallel")]
const MIN_BRANCHES_PER_TASK: usize = 2048;

pub(crate) fn for_each_branch<F>(values: &mut [u64], stride: usize, amps: &mut [Complex64], f: F)
where
    F: Fn(&mut [u64], &mut Complex64) + Sync + Send,
{
    debug_assert_eq!(values.len(), stride * amps.len());
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks_mut(stride)
            .zip(amps.par_iter_mut())
            .with_min_len(MIN_BRANCHES_PER_TASK)
            .for_each(|(row, amp)| f(row, amp));
    }
    #[cfg(not(feature = "parallel"))]
    {
        values
            .chunks_mut(stride)
            .zip(amps.iter_mut())
            .for_each(|(row, amp)| f(row, amp));
    }
}

pub(crate) fn for_each_row<F>(values: &mut [u64], stride: usize, f: F)
where
    F: Fn(&mut [u64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks_mut(stride)
            .with_min_len(MIN_BRANCHES_PER_TASK)
            .for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        values.chunks_mut(stride).for_each(f);
    }
}

/// Runs `f` on every row, stopping at the first error.
pub(crate) fn try_for_each_row<F, E>(values: &[u64], stride: usize, f: F) -> Result<(), E>
where
    F: Fn(&[u64]) -> Result<(), E> + Sync + Send,
    E: Send,
{
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks(stride)
            .with_min_len(MIN_BRANCHES_PER_TASK)
            .try_for_each(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        values.chunks(stride).try_for_each(f)
    }
}

pub(crate) fn any_row<F>(values: &[u64], stride: usize, f: F) -> bool
where
    F: Fn(&[u64]) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks(stride)
            .with_min_len(MIN_BRANCHES_PER_TASK)
            .any(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        values.chunks(stride).any(f)
    }
}

pub(crate) fn sum_norm_sqr(amps: &[Complex64]) -> f64 {
    // Fixed-order summation keeps the result bitwise reproducible across
    // thread counts.
    amps.iter().map(|a| a.norm_sqr()).sum()
}

pub(crate) fn sort_indices_by<F>(indices: &mut [usize], cmp: F)
where
    F: Fn(&usize, &usize) -> std::cmp::Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if indices.len() >= MIN_BRANCHES_PER_TASK {
            indices.par_sort_unstable_by(cmp);
            return;
        }
    }
    indices.sort_unstable_by(cmp);
}

/// Maps `f` over `items` (in parallel when enabled) and concatenates the
/// per-item branch tables in item order.
pub(crate) fn flat_map_tables<T, F>(items: &[T], f: F) -> (Vec<u64>, Vec<Complex64>)
where
    T: Sync,
    F: Fn(&T, &mut Vec<u64>, &mut Vec<Complex64>) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= 64 {
            let parts: Vec<(Vec<u64>, Vec<Complex64>)> = items
                .par_iter()
                .with_min_len(32)
                .fold(
                    || (Vec::new(), Vec::new()),
                    |(mut v, mut a), item| {
                        f(item, &mut v, &mut a);
                        (v, a)
                    },
                )
                .collect();
            let nv = parts.iter().map(|p| p.0.len()).sum();
            let na = parts.iter().map(|p| p.1.len()).sum();
            let mut values = Vec::with_capacity(nv);
            let mut amps = Vec::with_capacity(na);
            for (v, a) in parts {
                values.extend(v);
                amps.extend(a);
            }
            return (values, amps);
        }
    }
    let mut values = Vec::new();
    let mut amps = Vec::new();
    for item in items {
        f(item, &mut values, &mut amps);
    }
    (values, amps)
}
