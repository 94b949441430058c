use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::EncodingKind;
use crate::error::bail;
use crate::Result;

pub const CONFIG_VERSION: u32 = 1;

fn default_kernel() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_bits() -> u32 {
    8
}

/// Input encoder of the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub kind: EncodingKind,
    /// Planes per channel; ignored for base-2, which always emits `bits` planes.
    pub planes: usize,
    #[serde(default = "default_bits")]
    pub bits: u32,
}

impl EncodingSpec {
    pub fn planes_per_channel(&self) -> usize {
        match self.kind {
            EncodingKind::Base2 => self.bits as usize,
            _ => self.planes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoding: EncodingSpec,
}

/// One convolution; the input channel count is inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_one")]
    pub groups: usize,
    #[serde(default)]
    pub shuffle: bool,
}

impl ConvSpec {
    pub fn new(out_channels: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride,
            groups: 1,
            shuffle: false,
        }
    }
}

/// Lightweight replacement block: `g`-group 3x3 stride-2 convolution that
/// doubles the channel count, followed by a channel shuffle when `g > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwcBlock {
    pub groups: usize,
}

impl LwcBlock {
    pub fn conv(&self, in_channels: usize) -> ConvSpec {
        ConvSpec {
            out_channels: 2 * in_channels,
            kernel: 3,
            stride: 2,
            groups: self.groups,
            shuffle: self.groups > 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockBody {
    Layers { layers: Vec<ConvSpec> },
    Lwc(LwcBlock),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    #[serde(default = "default_true")]
    pub prunable: bool,
    /// Group count used when this block is replaced by an LWC block.
    #[serde(default = "default_one")]
    pub lwc_groups: usize,
    pub body: BlockBody,
}

impl BlockSpec {
    pub fn is_lwc(&self) -> bool {
        matches!(self.body, BlockBody::Lwc(_))
    }

    pub fn convs(&self, in_channels: usize) -> Vec<ConvSpec> {
        match &self.body {
            BlockBody::Layers { layers } => layers.clone(),
            BlockBody::Lwc(lwc) => vec![lwc.conv(in_channels)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub classes: usize,
    /// Constant multiplier turning popcount sums into logits;
    /// defaults to `1 / sqrt(in_features)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_scale: Option<f32>,
}

/// Network description: first layers, prunable blocks, classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub version: u32,
    pub name: String,
    pub input: InputSpec,
    pub stem: Vec<ConvSpec>,
    pub blocks: Vec<BlockSpec>,
    pub classifier: ClassifierSpec,
}

/// A convolution with every dimension resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub shuffle: bool,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    pub fn out_dims(&self) -> (usize, usize, usize) {
        (self.out_channels, self.out_height, self.out_width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShapes {
    pub stem: Vec<ConvShape>,
    pub blocks: Vec<Vec<ConvShape>>,
    pub classifier_in: usize,
    pub classes: usize,
}

impl NetShapes {
    /// Output `(C, H, W)` of block `i` (0-based).
    pub fn block_output(&self, i: usize) -> (usize, usize, usize) {
        self.blocks[i].last().expect("empty block").out_dims()
    }

    pub fn all_convs(&self) -> impl Iterator<Item = &ConvShape> {
        self.stem.iter().chain(self.blocks.iter().flatten())
    }
}

fn resolve(spec: &ConvSpec, (c, h, w): (usize, usize, usize), at: &str) -> Result<ConvShape> {
    if spec.kernel == 0 || spec.kernel % 2 == 0 {
        bail!(Config, "{}: kernel {} must be odd", at, spec.kernel);
    }
    if spec.stride == 0 || spec.out_channels == 0 {
        bail!(Config, "{}: zero stride or channel count", at);
    }
    if spec.groups == 0 || c % spec.groups != 0 || spec.out_channels % spec.groups != 0 {
        bail!(
            Config,
            "{}: channels {}->{} not divisible by {} groups",
            at,
            c,
            spec.out_channels,
            spec.groups
        );
    }
    let pad = spec.kernel / 2;
    if h + 2 * pad < spec.kernel || w + 2 * pad < spec.kernel {
        bail!(Config, "{}: input {}x{} too small", at, h, w);
    }
    Ok(ConvShape {
        in_channels: c,
        in_height: h,
        in_width: w,
        out_channels: spec.out_channels,
        out_height: (h + 2 * pad - spec.kernel) / spec.stride + 1,
        out_width: (w + 2 * pad - spec.kernel) / spec.stride + 1,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: pad,
        groups: spec.groups,
        shuffle: spec.shuffle,
    })
}

impl NetConfig {
    /// Number of encoded input planes (`channels * planes per channel`).
    pub fn input_planes(&self) -> usize {
        self.input.channels * self.input.encoding.planes_per_channel()
    }

    /// Runs shape inference end to end.
    pub fn infer_shapes(&self) -> Result<NetShapes> {
        if self.version != CONFIG_VERSION {
            bail!(Config, "unsupported config version {}", self.version);
        }
        let i = &self.input;
        if i.channels == 0 || i.height == 0 || i.width == 0 || self.input.encoding.planes_per_channel() == 0 {
            bail!(Config, "empty input specification");
        }
        if self.classifier.classes < 2 {
            bail!(Config, "classifier needs at least 2 classes");
        }
        let mut dims = (self.input_planes(), i.height, i.width);
        let mut stem = Vec::new();
        for (k, spec) in self.stem.iter().enumerate() {
            let s = resolve(spec, dims, &format!("stem layer {}", k + 1))?;
            dims = s.out_dims();
            stem.push(s);
        }
        let mut blocks = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let convs = block.convs(dims.0);
            if convs.is_empty() {
                bail!(Config, "block {} ({}) has no layers", b + 1, block.name);
            }
            let mut shapes = Vec::new();
            for (k, spec) in convs.iter().enumerate() {
                let s = resolve(spec, dims, &format!("block {} layer {}", b + 1, k + 1))?;
                dims = s.out_dims();
                shapes.push(s);
            }
            blocks.push(shapes);
        }
        Ok(NetShapes {
            stem,
            blocks,
            classifier_in: dims.0 * dims.1 * dims.2,
            classes: self.classifier.classes,
        })
    }

    /// Swaps block `block` (1-based) for an LWC block with `groups` groups.
    /// The output shape of the block, and therefore of every later layer,
    /// must stay the same.
    pub fn replace_block(&self, block: usize, groups: usize) -> Result<NetConfig> {
        let shapes = self.infer_shapes()?;
        if block == 0 || block > self.blocks.len() {
            bail!(
                Replacement,
                "block {} does not exist ({} blocks)",
                block,
                self.blocks.len()
            );
        }
        let idx = block - 1;
        let spec = &self.blocks[idx];
        if !spec.prunable {
            bail!(Replacement, "block {} ({}) is not prunable", block, spec.name);
        }
        let input = if idx == 0 {
            shapes.stem.last().map(|s| s.out_dims()).unwrap_or((
                self.input_planes(),
                self.input.height,
                self.input.width,
            ))
        } else {
            shapes.block_output(idx - 1)
        };
        let before = shapes.block_output(idx);
        let lwc = LwcBlock { groups };
        let after = resolve(&lwc.conv(input.0), input, "LWC block")
            .map_err(|e| crate::Error::Replacement(e.to_string()))?
            .out_dims();
        if before != after {
            bail!(
                Replacement,
                "block {} outputs {:?} (CxHxW) but an LWC block would output {:?}",
                block,
                before,
                after
            );
        }
        let mut out = self.clone();
        out.blocks[idx].body = BlockBody::Lwc(lwc);
        out.blocks[idx].lwc_groups = groups;
        let new_shapes = out.infer_shapes()?;
        if new_shapes.classifier_in != shapes.classifier_in {
            bail!(Replacement, "replacement changed the classifier input");
        }
        Ok(out)
    }

    pub fn logit_scale(&self) -> Result<f32> {
        let n = self.infer_shapes()?.classifier_in;
        Ok(self
            .classifier
            .logit_scale
            .unwrap_or_else(|| 1.0 / libm::sqrtf(n as f32)))
    }
}

/// Built-in topologies.
pub mod reference {
    use super::*;

    fn block(name: &str, in_ch: usize, lwc_groups: usize, depth: usize) -> BlockSpec {
        let mut layers = vec![ConvSpec::new(2 * in_ch, 2)];
        layers.extend(core::iter::repeat(ConvSpec::new(2 * in_ch, 1)).take(depth - 1));
        BlockSpec {
            name: name.to_string(),
            prunable: true,
            lwc_groups,
            body: BlockBody::Layers { layers },
        }
    }

    /// Small 32x32 model: stride-2 stem to 8 channels, three two-layer
    /// blocks (8->16->32->64 channels), binary classifier over 64x2x2.
    pub fn toy(encoding: EncodingSpec, classes: usize) -> NetConfig {
        NetConfig {
            version: CONFIG_VERSION,
            name: "toy".to_string(),
            input: InputSpec {
                channels: 3,
                height: 32,
                width: 32,
                encoding,
            },
            stem: vec![ConvSpec::new(8, 2)],
            blocks: vec![
                block("block1", 8, 1, 2),
                block("block2", 16, 2, 2),
                block("block3", 32, 8, 2),
            ],
            classifier: ClassifierSpec {
                classes,
                logit_scale: None,
            },
        }
    }

    /// VGG-Small-like stack for 96x96 inputs.
    pub fn vgg_small_like(encoding: EncodingSpec, classes: usize) -> NetConfig {
        NetConfig {
            version: CONFIG_VERSION,
            name: "vgg-small-like".to_string(),
            input: InputSpec {
                channels: 3,
                height: 96,
                width: 96,
                encoding,
            },
            stem: vec![ConvSpec::new(64, 1)],
            blocks: vec![
                block("block1", 64, 1, 2),
                block("block2", 128, 2, 2),
                block("block3", 256, 8, 2),
            ],
            classifier: ClassifierSpec {
                classes,
                logit_scale: None,
            },
        }
    }

    /// Eleven weight layers: stem, three three-layer blocks, classifier.
    pub fn eleven_layer(encoding: EncodingSpec, classes: usize) -> NetConfig {
        NetConfig {
            version: CONFIG_VERSION,
            name: "eleven-layer".to_string(),
            input: InputSpec {
                channels: 3,
                height: 96,
                width: 96,
                encoding,
            },
            stem: vec![ConvSpec::new(32, 2)],
            blocks: vec![
                block("block1", 32, 1, 3),
                block("block2", 64, 2, 3),
                block("block3", 128, 8, 3),
            ],
            classifier: ClassifierSpec {
                classes,
                logit_scale: None,
            },
        }
    }
}
