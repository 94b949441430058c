//! Bit-packed tensors and exact XNOR/popcount kernels.
//!
//! A set bit stands for `+1` and a cleared bit for `-1` whenever a tensor has
//! [`BitSemantics::Signed`] semantics. With that convention the dot product of
//! two `n`-element sign vectors is `n - 2 * popcount(a ^ b)`, which is the same
//! as `2 * popcount(xnor(a, b)) - n` but needs no masking of padding bits.

mod kernels;
mod tensor;

pub use kernels::{bin_conv2d, heaviside_threshold, popcount_linear, xnor_dot, Conv2dParams, PackedConv};
pub use tensor::{BitSemantics, BitTensor, IntTensor, Word, WORD_BITS};
