//! Declarative network description, lightweight grouped-convolution (LWC)
//! blocks and exact model-size / BOPs accounting.
//!
//! Every convolution uses "same" padding `k / 2`, so a stride-2 3x3 layer maps
//! `H` to `ceil(H / 2)`. Each convolution is followed by an optional channel
//! shuffle, batch normalization and the activation.

mod accounting;
mod config;
mod shuffle;

pub use accounting::{count_bops, count_model_size, LayerCost, SizeReport};
pub use config::{
    reference, BlockBody, BlockSpec, ClassifierSpec, ConvShape, ConvSpec, EncodingSpec, InputSpec, LwcBlock, NetConfig,
    NetShapes, CONFIG_VERSION,
};
pub use shuffle::{channel_shuffle, channel_unshuffle, shuffle_permutation};
