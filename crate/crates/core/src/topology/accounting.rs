use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::NetConfig;
use crate::encoders::EncodingKind;
use crate::Result;

/// Per-layer ledger line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    /// 1-bit weights.
    pub binary_weights: u64,
    /// 32-bit real parameters (batch-norm affine, threshold latents).
    pub real_params: u64,
    /// Binary multiply-accumulates, one BOP each.
    pub bops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeReport {
    pub layers: Vec<LayerCost>,
    pub binary_bits: u64,
    pub real_bits: u64,
    pub total_bits: u64,
    pub bops: u64,
}

fn ledger(cfg: &NetConfig, height: usize, width: usize) -> Result<SizeReport> {
    let mut cfg = cfg.clone();
    cfg.input.height = height;
    cfg.input.width = width;
    let shapes = cfg.infer_shapes()?;
    let mut layers = Vec::new();
    let enc = cfg.input.encoding;
    layers.push(LayerCost {
        name: String::from("encoder"),
        binary_weights: 0,
        real_params: if enc.kind == EncodingKind::Glt {
            (cfg.input.channels * (enc.planes + 1)) as u64
        } else {
            0
        },
        bops: 0,
    });
    let named = shapes
        .stem
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("stem.{}", i + 1), s))
        .chain(shapes.blocks.iter().enumerate().flat_map(|(b, convs)| {
            convs
                .iter()
                .enumerate()
                .map(move |(i, s)| (format!("block{}.{}", b + 1, i + 1), s))
        }));
    for (name, s) in named {
        let w = s.weight_len() as u64;
        layers.push(LayerCost {
            name,
            binary_weights: w,
            real_params: 2 * s.out_channels as u64,
            bops: w * (s.out_height * s.out_width) as u64,
        });
    }
    let cls = (shapes.classifier_in * shapes.classes) as u64;
    layers.push(LayerCost {
        name: String::from("classifier"),
        binary_weights: cls,
        real_params: 0,
        bops: cls,
    });
    let binary_bits = layers.iter().map(|l| l.binary_weights).sum();
    let real_bits = 32 * layers.iter().map(|l| l.real_params).sum::<u64>();
    Ok(SizeReport {
        bops: layers.iter().map(|l| l.bops).sum(),
        layers,
        binary_bits,
        real_bits,
        total_bits: binary_bits + real_bits,
    })
}

/// Model size in bits with a per-layer breakdown. Binary weights count one
/// bit, real-valued parameters 32 bits.
pub fn count_model_size(cfg: &NetConfig) -> Result<SizeReport> {
    ledger(cfg, cfg.input.height, cfg.input.width)
}

/// Total BOPs for an input of `height x width`: every binary MAC of every
/// convolution and of the classifier is one BOP.
pub fn count_bops(cfg: &NetConfig, height: usize, width: usize) -> Result<u64> {
    Ok(ledger(cfg, height, width)?.bops)
}
