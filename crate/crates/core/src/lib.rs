//! Building blocks for end-to-end fully-binarized networks.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! Everything here is pure computation; file formats, configuration files and
//! the command-line front end live in the `thermobnn-cli` crate.
//!
//! - [`bitcore`]: bit-packed tensors and exact XNOR/popcount kernels.
//! - [`encoders`]: learned and fixed thermometer encoders, base-2 planes,
//!   gamma inversion and the threshold surrogate gradient.
//! - [`train`]: a small reverse-mode training engine for binarized CNNs.
//! - [`topology`]: declarative network configs, lightweight grouped blocks,
//!   model size and BOPs accounting.
//! - [`pruning`]: gradual back-to-front block replacement with distillation.
//! - [`adcsim`]: functional model of a programmable-slope ramp ADC.
//! - [`data`]: datasets, augmentation and the synthetic benchmark generator.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
// `!(x >= y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adcsim;
pub mod bitcore;
pub mod data;
pub mod encoders;
mod error;
pub mod pruning;
pub mod rng;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
