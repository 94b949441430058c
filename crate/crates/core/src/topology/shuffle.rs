use alloc::vec::Vec;

use crate::error::bail;
use crate::Result;

/// Source channel for every output channel: view the channels as a
/// `(g, C / g)` matrix, transpose, flatten. `out[j] = in[perm[j]]`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        bail!(Config, "{} channels cannot be shuffled in {} groups", channels, groups);
    }
    let per = channels / groups;
    Ok((0..channels).map(|j| (j % groups) * per + j / groups).collect())
}

/// Applies the shuffle to a `[C, ...]` buffer.
pub fn channel_shuffle<T: Copy>(x: &[T], channels: usize, groups: usize) -> Result<Vec<T>> {
    permute(x, channels, &shuffle_permutation(channels, groups)?, false)
}

/// Inverse of [`channel_shuffle`] with the same arguments.
pub fn channel_unshuffle<T: Copy>(x: &[T], channels: usize, groups: usize) -> Result<Vec<T>> {
    permute(x, channels, &shuffle_permutation(channels, groups)?, true)
}

fn permute<T: Copy>(x: &[T], channels: usize, perm: &[usize], inverse: bool) -> Result<Vec<T>> {
    if channels == 0 || x.len() % channels != 0 {
        bail!(
            Dimension,
            "buffer of {} values is not a multiple of {} channels",
            x.len(),
            channels
        );
    }
    let plane = x.len() / channels;
    let mut out = Vec::with_capacity(x.len());
    if inverse {
        let mut inv = alloc::vec![0; channels];
        for (j, &src) in perm.iter().enumerate() {
            inv[src] = j;
        }
        for &src in &inv {
            out.extend_from_slice(&x[src * plane..(src + 1) * plane]);
        }
    } else {
        for &src in perm {
            out.extend_from_slice(&x[src * plane..(src + 1) * plane]);
        }
    }
    Ok(out)
}
