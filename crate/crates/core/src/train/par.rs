//! Sample-parallel helpers with thread-count independent results.
//!
//! Reductions always sum fixed groups of [`GROUP`] samples and then combine
//! the partial sums in group order, whether or not `parallel` is enabled.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) const GROUP: usize = 8;

/// Runs `f(i, chunk)` over consecutive `len`-sized chunks of `out`.
pub(crate) fn for_each_sample<T, F>(out: &mut [T], len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
}

/// For each group of up to [`GROUP`] samples, `f(first_sample, group_out)`
/// fills that group's slice of `out` (`len` values per sample) and returns a
/// partial sum of length `acc_len`; the partials are added in group order.
pub(crate) fn grouped_reduce<F>(n: usize, out: &mut [f32], len: usize, acc_len: usize, f: F) -> Vec<f32>
where
    F: Fn(usize, &mut [f32]) -> Vec<f32> + Sync + Send,
{
    let groups = n.div_ceil(GROUP);
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f32>> = {
        use rayon::prelude::*;
        if len == 0 {
            (0..groups).into_par_iter().map(|g| f(g * GROUP, &mut [])).collect()
        } else {
            out.par_chunks_mut(GROUP * len)
                .enumerate()
                .map(|(g, c)| f(g * GROUP, c))
                .collect()
        }
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f32>> = if len == 0 {
        (0..groups).map(|g| f(g * GROUP, &mut [])).collect()
    } else {
        out.chunks_mut(GROUP * len)
            .enumerate()
            .map(|(g, c)| f(g * GROUP, c))
            .collect()
    };
    let mut acc = vec![0.0f32; acc_len];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}
