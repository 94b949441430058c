use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{col_len, conv_backward, conv_forward};
use super::fold::{fold_batch_norm, FoldedThreshold};
use super::par::{for_each_sample, grouped_reduce, GROUP};
use crate::bitcore::{popcount_linear, BitTensor, Conv2dParams, PackedConv};
use crate::encoders::{
    encode_base2, encode_thermometer, glt_backward_accumulate, linear_ramp, EncodingKind, ImageDims, ImageView,
    SurrogateConfig, ThermoParams,
};
use crate::error::bail;
use crate::rng::{rng_for, stream};
use crate::topology::{channel_shuffle, channel_unshuffle, ConvShape, NetConfig, NetShapes};
use crate::Result;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Real-valued pretraining (real weights, ReLU) or fully-binarized
/// (`sign` weights, step activations, straight-through gradients).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Real,
    Binary,
}

/// Per-channel batch normalization. Running variance is the biased batch
/// variance averaged with momentum [`BN_MOMENTUM`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Convolution, optional channel shuffle, batch norm and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub shape: ConvShape,
    /// Latent weights `[Co, Ci / g, k, k]`.
    pub weight: Vec<f32>,
    pub bn: BatchNorm,
}

impl ConvUnit {
    fn random(shape: ConvShape, rng: &mut impl Rng) -> Self {
        let fan_in = (shape.in_channels / shape.groups) * shape.kernel * shape.kernel;
        let normal = Normal::new(0.0f32, libm::sqrtf(2.0 / fan_in as f32)).expect("valid std");
        Self {
            shape,
            weight: (0..shape.weight_len()).map(|_| normal.sample(rng)).collect(),
            bn: BatchNorm::new(shape.out_channels),
        }
    }

    /// `sign(latent)` with `sign(0) = +1` as a packed `[Co, Ci/g, k, k]` tensor.
    pub fn binary_weights(&self) -> BitTensor {
        let s = &self.shape;
        BitTensor::from_signs_f32(
            &[s.out_channels, s.in_channels / s.groups, s.kernel, s.kernel],
            &self.weight,
        )
        .expect("weight length matches shape")
    }

    pub fn folded(&self) -> Vec<FoldedThreshold> {
        fold_batch_norm(&self.bn)
    }
}

/// Binary linear classifier; logits are `scale * W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub in_features: usize,
    pub classes: usize,
    pub scale: f32,
    /// Latent weights `[classes, in_features]`.
    pub weight: Vec<f32>,
}

impl Classifier {
    pub fn binary_weights(&self) -> BitTensor {
        BitTensor::from_signs_f32(&[self.classes, self.in_features], &self.weight).expect("weight length matches shape")
    }
}

/// First-layer input binarization.
#[derive(Debug, Clone, PartialEq)]
pub enum InputEncoder {
    Learned(ThermoParams),
    Fixed { planes: usize, bits: u32 },
    Base2 { bits: u32 },
}

impl InputEncoder {
    pub fn kind(&self) -> EncodingKind {
        match self {
            InputEncoder::Learned(_) => EncodingKind::Glt,
            InputEncoder::Fixed { .. } => EncodingKind::Fixed,
            InputEncoder::Base2 { .. } => EncodingKind::Base2,
        }
    }

    /// Per-channel thresholds of a thermometer encoder.
    pub fn thresholds(&self, channels: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            InputEncoder::Learned(p) => Some(p.all_thresholds()),
            InputEncoder::Fixed { planes, bits } => Some(vec![linear_ramp(*planes, *bits); channels]),
            InputEncoder::Base2 { .. } => None,
        }
    }

    /// Encodes one normalized image into `{0, 1}` planes.
    pub fn encode(&self, image: ImageView<'_>) -> Result<crate::encoders::EncodedPlanes> {
        match self {
            InputEncoder::Base2 { bits } => {
                let top = ((1u64 << bits) - 1) as f64;
                let px: Vec<u32> = image
                    .data
                    .iter()
                    .map(|v| libm::rint(v.clamp(0.0, 1.0) * top) as u32)
                    .collect();
                encode_base2(&px, image.dims, *bits)
            }
            _ => {
                let t = self.thresholds(image.dims.channels).expect("thermometer encoder");
                encode_thermometer(image, &t, self.kind())
            }
        }
    }
}

/// Operation counts of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// MACs executed by the XNOR/popcount kernels on `+-1` operands.
    pub binary_macs: u64,
    /// MACs executed in floating point.
    pub real_macs: u64,
}

struct UnitCache {
    xhat: Vec<f32>,
    u: Vec<f32>,
    invstd: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
}

/// Activations and caches of one forward pass.
pub struct ForwardPass {
    pub n: usize,
    pub logits: Vec<f32>,
    pub trace: ForwardTrace,
    /// Pixels clamped into `[0, 1]` by the encoder.
    pub clamped: usize,
    images: Vec<f64>,
    acts: Vec<Vec<f32>>,
    caches: Vec<UnitCache>,
}

impl ForwardPass {
    /// Encoded `+-1` input planes, `[n, C * M, H, W]`.
    pub fn input_planes(&self) -> &[f32] {
        &self.acts[0]
    }

    /// Output activations of unit `k`.
    pub fn activation(&self, k: usize) -> &[f32] {
        &self.acts[k + 1]
    }
}

/// Gradients, one buffer per parameter in [`Network::params_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub buffers: Vec<Vec<f64>>,
}

impl Grads {
    pub fn is_finite(&self) -> bool {
        self.buffers.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.buffers.iter().flatten().map(|v| v * v).sum())
    }
}

/// What a parameter buffer holds; decides post-step constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ThermoLatent,
    Weight,
    BnScale,
    BnShift,
}

pub enum ParamSlice<'a> {
    F32(&'a mut [f32]),
    F64(&'a mut [f64]),
}

impl ParamSlice<'_> {
    pub fn len(&self) -> usize {
        match self {
            ParamSlice::F32(s) => s.len(),
            ParamSlice::F64(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trainable network built from a [`NetConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub shapes: NetShapes,
    pub mode: Mode,
    pub encoder: InputEncoder,
    /// Stem units followed by every block's units.
    pub units: Vec<ConvUnit>,
    pub classifier: Classifier,
}

impl Network {
    /// Randomly initialized network; thermometer encoders start on the linear ramp.
    pub fn new(config: NetConfig, mode: Mode, seed: u64) -> Result<Self> {
        let shapes = config.infer_shapes()?;
        let enc = config.input.encoding;
        let encoder = match enc.kind {
            EncodingKind::Glt => {
                InputEncoder::Learned(ThermoParams::linear_init(config.input.channels, enc.planes, enc.bits)?)
            }
            EncodingKind::Fixed => {
                if enc.planes == 0 {
                    bail!(Config, "fixed thermometer needs at least one plane");
                }
                InputEncoder::Fixed {
                    planes: enc.planes,
                    bits: enc.bits,
                }
            }
            EncodingKind::Base2 => InputEncoder::Base2 { bits: enc.bits },
        };
        let mut rng = rng_for(seed, &[stream::INIT]);
        let units = shapes.all_convs().map(|s| ConvUnit::random(*s, &mut rng)).collect();
        let n = shapes.classifier_in * shapes.classes;
        let classifier = Classifier {
            in_features: shapes.classifier_in,
            classes: shapes.classes,
            scale: config.logit_scale()?,
            weight: (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        };
        Ok(Self {
            config,
            shapes,
            mode,
            encoder,
            units,
            classifier,
        })
    }

    pub fn input_dims(&self) -> ImageDims {
        ImageDims::new(
            self.config.input.channels,
            self.config.input.height,
            self.config.input.width,
        )
    }

    /// Unit index range of block `block` (1-based); `0` selects the stem.
    pub fn unit_range(&self, block: usize) -> Range<usize> {
        let stem = self.shapes.stem.len();
        if block == 0 {
            return 0..stem;
        }
        let start = stem + self.shapes.blocks[..block - 1].iter().map(Vec::len).sum::<usize>();
        start..start + self.shapes.blocks[block - 1].len()
    }

    /// Copy of this network where block `block` (1-based) becomes a freshly
    /// initialized LWC block; every other parameter is carried over.
    pub fn with_replaced_block(&self, block: usize, groups: usize, seed: u64) -> Result<Network> {
        let config = self.config.replace_block(block, groups)?;
        let shapes = config.infer_shapes()?;
        let old = self.unit_range(block);
        let mut rng = rng_for(seed, &[stream::LWC_INIT, block as u64]);
        let mut units = self.units[..old.start].to_vec();
        units.extend(shapes.blocks[block - 1].iter().map(|s| ConvUnit::random(*s, &mut rng)));
        units.extend_from_slice(&self.units[old.end..]);
        for (u, s) in units.iter().zip(shapes.all_convs()) {
            if u.shape != *s {
                bail!(Replacement, "unit shape {:?} does not match {:?}", u.shape, s);
            }
        }
        Ok(Network {
            config,
            shapes,
            mode: self.mode,
            encoder: self.encoder.clone(),
            units,
            classifier: self.classifier.clone(),
        })
    }

    /// Buffer lengths in [`Network::params_mut`] order.
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        if let InputEncoder::Learned(p) = &self.encoder {
            sizes.push(p.latent().len());
        }
        for u in &self.units {
            sizes.extend([u.weight.len(), u.bn.gamma.len(), u.bn.beta.len()]);
        }
        sizes.push(self.classifier.weight.len());
        sizes
    }

    pub fn params_mut(&mut self) -> Vec<(ParamKind, ParamSlice<'_>)> {
        let mut out = Vec::new();
        if let InputEncoder::Learned(p) = &mut self.encoder {
            out.push((ParamKind::ThermoLatent, ParamSlice::F64(p.latent_mut())));
        }
        for u in &mut self.units {
            out.push((ParamKind::Weight, ParamSlice::F32(&mut u.weight)));
            out.push((ParamKind::BnScale, ParamSlice::F32(&mut u.bn.gamma)));
            out.push((ParamKind::BnShift, ParamSlice::F32(&mut u.bn.beta)));
        }
        out.push((ParamKind::Weight, ParamSlice::F32(&mut self.classifier.weight)));
        out
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            buffers: self.param_sizes().into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }

    /// Constraints applied after every optimizer step: threshold latents are
    /// clipped to their minimum, and binarized latent weights to `[-1, 1]`.
    pub fn enforce_constraints(&mut self) {
        if let InputEncoder::Learned(p) = &mut self.encoder {
            p.project();
        }
        if self.mode == Mode::Binary {
            for w in self
                .units
                .iter_mut()
                .flat_map(|u| u.weight.iter_mut())
                .chain(self.classifier.weight.iter_mut())
            {
                *w = w.clamp(-1.0, 1.0);
            }
        }
    }

    /// Folds the batch statistics of a training pass into the running statistics.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (u, c) in self.units.iter_mut().zip(&pass.caches) {
            for ch in 0..u.bn.gamma.len() {
                u.bn.running_mean[ch] = (1.0 - BN_MOMENTUM) * u.bn.running_mean[ch] + BN_MOMENTUM * c.mean[ch];
                u.bn.running_var[ch] = (1.0 - BN_MOMENTUM) * u.bn.running_var[ch] + BN_MOMENTUM * c.var[ch];
            }
        }
    }

    fn effective_weight(&self, w: &[f32]) -> Vec<f32> {
        match self.mode {
            Mode::Real => w.to_vec(),
            Mode::Binary => w.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect(),
        }
    }

    fn pad_value(&self) -> f32 {
        match self.mode {
            Mode::Real => 0.0,
            Mode::Binary => -1.0,
        }
    }

    /// Encodes a batch of normalized images into `+-1` planes.
    pub fn encode_batch(&self, images: &[f64], n: usize) -> Result<(Vec<f32>, usize)> {
        let dims = self.input_dims();
        if images.len() != n * dims.len() {
            bail!(Dimension, "{} pixels for {} images of {:?}", images.len(), n, dims);
        }
        let per = self.config.input_planes() * dims.plane_len();
        let mut out = vec![0.0f32; n * per];
        let mut clamped = 0;
        for (i, dst) in out.chunks_mut(per).enumerate() {
            let view = ImageView::new(dims, &images[i * dims.len()..(i + 1) * dims.len()])?;
            let planes = self.encoder.encode(view)?;
            if planes.bits.len() != per {
                bail!(
                    Dimension,
                    "encoder produced {} bits, expected {}",
                    planes.bits.len(),
                    per
                );
            }
            clamped += planes.clamped;
            for (k, d) in dst.iter_mut().enumerate() {
                *d = if planes.bits.get(k) { 1.0 } else { -1.0 };
            }
        }
        Ok((out, clamped))
    }

    /// Forward pass over `n` normalized images (`[n, C, H, W]`).
    ///
    /// With `training`, batch statistics are used and caches are kept for
    /// [`Network::backward`]. Otherwise running statistics are used; in
    /// binary mode each batch norm + step pair is evaluated as the exact
    /// integer threshold it folds into.
    pub fn forward(&self, images: &[f64], n: usize, training: bool) -> Result<ForwardPass> {
        if n == 0 {
            bail!(Dimension, "empty batch");
        }
        let (planes, clamped) = self.encode_batch(images, n)?;
        let mut acts = vec![planes];
        let mut caches = Vec::new();
        let mut trace = ForwardTrace::default();
        for unit in &self.units {
            let s = unit.shape;
            let z = self.conv_batch(unit, acts.last().expect("input"), n, &mut trace)?;
            let (act, cache) = if training {
                let (act, cache) = self.bn_act_train(unit, &z, n);
                (act, Some(cache))
            } else {
                (self.bn_act_eval(unit, &z, n), None)
            };
            debug_assert_eq!(act.len(), n * s.out_len());
            acts.push(act);
            if let Some(c) = cache {
                caches.push(c);
            }
        }
        let logits = self.classify(acts.last().expect("features"), n, &mut trace)?;
        Ok(ForwardPass {
            n,
            logits,
            trace,
            clamped,
            images: images.to_vec(),
            acts,
            caches,
        })
    }

    /// Convolution output (after the optional shuffle) for the whole batch.
    fn conv_batch(&self, unit: &ConvUnit, input: &[f32], n: usize, trace: &mut ForwardTrace) -> Result<Vec<f32>> {
        let s = unit.shape;
        let (in_len, out_len) = (s.in_len(), s.out_len());
        let mut z = vec![0.0f32; n * out_len];
        let macs = (n as u64) * (s.weight_len() * s.out_height * s.out_width) as u64;
        match self.mode {
            Mode::Real => {
                trace.real_macs += macs;
                for_each_sample(&mut z, out_len, |i, out| {
                    let mut col = vec![0.0; col_len(&s)];
                    conv_forward(
                        &input[i * in_len..(i + 1) * in_len],
                        &unit.weight,
                        &s,
                        0.0,
                        &mut col,
                        out,
                    );
                });
            }
            Mode::Binary => {
                trace.binary_macs += macs;
                let packed = PackedConv::new(&unit.binary_weights(), Conv2dParams::new(s.stride, s.padding, s.groups))?;
                let shape = [s.in_channels, s.in_height, s.in_width];
                let failed = core::sync::atomic::AtomicBool::new(false);
                for_each_sample(&mut z, out_len, |i, out| {
                    let x = BitTensor::from_signs_f32(&shape, &input[i * in_len..(i + 1) * in_len]);
                    match x.and_then(|x| packed.apply(&x)) {
                        Ok(acc) => {
                            for (o, v) in out.iter_mut().zip(acc.data()) {
                                *o = *v as f32;
                            }
                        }
                        Err(_) => failed.store(true, core::sync::atomic::Ordering::Relaxed),
                    }
                });
                if failed.into_inner() {
                    bail!(Dimension, "binary convolution failed for shape {:?}", s);
                }
            }
        }
        if s.shuffle {
            let mut shuffled = Vec::with_capacity(z.len());
            for sample in z.chunks(out_len) {
                shuffled.extend(channel_shuffle(sample, s.out_channels, s.groups)?);
            }
            z = shuffled;
        }
        Ok(z)
    }

    fn bn_act_train(&self, unit: &ConvUnit, z: &[f32], n: usize) -> (Vec<f32>, UnitCache) {
        let s = unit.shape;
        let (c, hw) = (s.out_channels, s.out_height * s.out_width);
        let count = (n * hw) as f64;
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        let mut invstd = vec![0.0f32; c];
        for ch in 0..c {
            let vals = (0..n).flat_map(|i| z[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter());
            let m: f64 = vals.clone().map(|v| f64::from(*v)).sum::<f64>() / count;
            let v: f64 = vals.map(|x| (f64::from(*x) - m) * (f64::from(*x) - m)).sum::<f64>() / count;
            mean[ch] = m as f32;
            var[ch] = v as f32;
            invstd[ch] = 1.0 / libm::sqrtf(v as f32 + BN_EPS);
        }
        let mut xhat = vec![0.0f32; z.len()];
        let mut u = vec![0.0f32; z.len()];
        let mut act = vec![0.0f32; z.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for k in r {
                    let xh = (z[k] - mean[ch]) * invstd[ch];
                    let uu = unit.bn.gamma[ch] * xh + unit.bn.beta[ch];
                    xhat[k] = xh;
                    u[k] = uu;
                    act[k] = match self.mode {
                        Mode::Real => uu.max(0.0),
                        Mode::Binary => {
                            if uu >= 0.0 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                }
            }
        }
        (
            act,
            UnitCache {
                xhat,
                u,
                invstd,
                mean,
                var,
            },
        )
    }

    fn bn_act_eval(&self, unit: &ConvUnit, z: &[f32], n: usize) -> Vec<f32> {
        let s = unit.shape;
        let (c, hw) = (s.out_channels, s.out_height * s.out_width);
        let mut act = vec![0.0f32; z.len()];
        match self.mode {
            Mode::Real => {
                let bn = &unit.bn;
                for i in 0..n {
                    for ch in 0..c {
                        let inv = 1.0 / libm::sqrtf(bn.running_var[ch] + BN_EPS);
                        for k in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            let u = bn.gamma[ch] * (z[k] - bn.running_mean[ch]) * inv + bn.beta[ch];
                            act[k] = u.max(0.0);
                        }
                    }
                }
            }
            Mode::Binary => {
                let folded = unit.folded();
                for i in 0..n {
                    for (ch, f) in folded.iter().enumerate() {
                        for k in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            act[k] = if f.fires(z[k] as i32) { 1.0 } else { -1.0 };
                        }
                    }
                }
            }
        }
        act
    }

    fn classify(&self, features: &[f32], n: usize, trace: &mut ForwardTrace) -> Result<Vec<f32>> {
        let cls = &self.classifier;
        let (nin, nc) = (cls.in_features, cls.classes);
        let macs = (n * nin * nc) as u64;
        let mut logits = vec![0.0f32; n * nc];
        match self.mode {
            Mode::Real => {
                trace.real_macs += macs;
                for i in 0..n {
                    let x = &features[i * nin..(i + 1) * nin];
                    for j in 0..nc {
                        let w = &cls.weight[j * nin..(j + 1) * nin];
                        let dot: f32 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                        logits[i * nc + j] = cls.scale * dot;
                    }
                }
            }
            Mode::Binary => {
                trace.binary_macs += macs;
                let w = cls.binary_weights();
                for i in 0..n {
                    let x = BitTensor::from_signs_f32(&[nin], &features[i * nin..(i + 1) * nin])?;
                    let acc = popcount_linear(&x, &w)?;
                    for (j, v) in acc.data().iter().enumerate() {
                        logits[i * nc + j] = cls.scale * *v as f32;
                    }
                }
            }
        }
        Ok(logits)
    }

    /// Reverse pass from `dL/dlogits`.
    ///
    /// Step activations and `sign` weights use straight-through gradients
    /// (identity where `|u| <= 1` for activations, identity for weights);
    /// thermometer thresholds use the clipped bell surrogate.
    pub fn backward(&self, pass: &ForwardPass, dlogits: &[f64], surrogate: &SurrogateConfig) -> Result<Grads> {
        let n = pass.n;
        if pass.caches.len() != self.units.len() {
            bail!(Dimension, "backward needs a training-mode forward pass");
        }
        let cls = &self.classifier;
        let (nin, nc) = (cls.in_features, cls.classes);
        if dlogits.len() != n * nc {
            bail!(Dimension, "{} logit gradients for {} x {}", dlogits.len(), n, nc);
        }
        let mut grads = self.zero_grads();
        let offset = usize::from(matches!(self.encoder, InputEncoder::Learned(_)));

        // classifier
        let features = pass.acts.last().expect("features");
        let w_eff = self.effective_weight(&cls.weight);
        let dw = &mut grads.buffers[offset + 3 * self.units.len()];
        let mut g = vec![0.0f32; n * nin];
        for i in 0..n {
            let x = &features[i * nin..(i + 1) * nin];
            for j in 0..nc {
                let d = dlogits[i * nc + j] * f64::from(cls.scale);
                if d == 0.0 {
                    continue;
                }
                let row = &mut dw[j * nin..(j + 1) * nin];
                for (r, xv) in row.iter_mut().zip(x) {
                    *r += d * f64::from(*xv);
                }
                let gi = &mut g[i * nin..(i + 1) * nin];
                for (gv, wv) in gi.iter_mut().zip(&w_eff[j * nin..(j + 1) * nin]) {
                    *gv += (d as f32) * wv;
                }
            }
        }

        let need_input_grad = offset == 1;
        let pad = self.pad_value();
        for (k, unit) in self.units.iter().enumerate().rev() {
            let s = unit.shape;
            let cache = &pass.caches[k];
            let (c, hw) = (s.out_channels, s.out_height * s.out_width);
            // activation
            for (gv, u) in g.iter_mut().zip(&cache.u) {
                let pass_through = match self.mode {
                    Mode::Real => *u > 0.0,
                    Mode::Binary => libm::fabsf(*u) <= 1.0,
                };
                if !pass_through {
                    *gv = 0.0;
                }
            }
            // batch norm
            let count = (n * hw) as f32;
            let base = offset + 3 * k;
            let mut dz = vec![0.0f32; g.len()];
            for ch in 0..c {
                let idx = || (0..n).flat_map(move |i| (i * c + ch) * hw..(i * c + ch + 1) * hw);
                let sum_g: f64 = idx().map(|q| f64::from(g[q])).sum();
                let sum_gx: f64 = idx().map(|q| f64::from(g[q]) * f64::from(cache.xhat[q])).sum();
                grads.buffers[base + 1][ch] = sum_gx;
                grads.buffers[base + 2][ch] = sum_g;
                let scale = unit.bn.gamma[ch] * cache.invstd[ch] / count;
                let (sg, sgx) = (sum_g as f32, sum_gx as f32);
                for q in idx() {
                    dz[q] = scale * (count * g[q] - sg - cache.xhat[q] * sgx);
                }
            }
            if s.shuffle {
                let mut un = Vec::with_capacity(dz.len());
                for sample in dz.chunks(s.out_len()) {
                    un.extend(channel_unshuffle(sample, c, s.groups)?);
                }
                dz = un;
            }
            // convolution
            let input = &pass.acts[k];
            let w_eff = self.effective_weight(&unit.weight);
            let want_din = k > 0 || need_input_grad;
            let in_len = s.in_len();
            let out_len = s.out_len();
            let mut din = vec![0.0f32; if want_din { n * in_len } else { 0 }];
            let dw = grouped_reduce(
                n,
                &mut din,
                if want_din { in_len } else { 0 },
                unit.weight.len(),
                |first, din_group| {
                    let mut col = vec![0.0; col_len(&s)];
                    let mut acc = vec![0.0f32; w_eff.len()];
                    let last = (first + GROUP).min(n);
                    for i in first..last {
                        let dst = if want_din {
                            Some(&mut din_group[(i - first) * in_len..(i - first + 1) * in_len])
                        } else {
                            None
                        };
                        conv_backward(
                            &input[i * in_len..(i + 1) * in_len],
                            &w_eff,
                            &dz[i * out_len..(i + 1) * out_len],
                            &s,
                            pad,
                            &mut col,
                            &mut acc,
                            dst,
                        );
                    }
                    acc
                },
            );
            for (d, v) in grads.buffers[base].iter_mut().zip(dw) {
                *d = f64::from(v);
            }
            g = din;
        }

        if let InputEncoder::Learned(params) = &self.encoder {
            let dims = self.input_dims();
            let per = g.len() / n;
            let up: Vec<f32> = g.iter().map(|v| 2.0 * v).collect();
            for i in 0..n {
                let view = ImageView::new(dims, &pass.images[i * dims.len()..(i + 1) * dims.len()])?;
                glt_backward_accumulate(
                    &up[i * per..(i + 1) * per],
                    view,
                    params,
                    surrogate,
                    &mut grads.buffers[0],
                )?;
            }
        }
        if !grads.is_finite() {
            bail!(Numeric, "non-finite gradient (norm {})", grads.norm());
        }
        Ok(grads)
    }

    /// Evaluation-mode logits.
    pub fn predict(&self, images: &[f64], n: usize) -> Result<Vec<f32>> {
        Ok(self.forward(images, n, false)?.logits)
    }

    /// Copies the weights of `other` into a network of a different mode.
    pub fn to_mode(&self, mode: Mode) -> Network {
        let mut out = self.clone();
        out.mode = mode;
        out
    }

    pub fn describe(&self) -> alloc::string::String {
        format!(
            "{} ({:?}, {:?} encoder, {} units, {} classes)",
            self.config.name,
            self.mode,
            self.encoder.kind(),
            self.units.len(),
            self.classifier.classes
        )
    }
}

/// Index of the largest logit for each sample (first on ties).
pub fn argmax_rows(logits: &[f32], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::topology::{BlockBody, BlockSpec, ClassifierSpec, ConvSpec, EncodingSpec, InputSpec, CONFIG_VERSION};
    use crate::train::loss::cross_entropy;

    pub(crate) fn tiny_config(kind: EncodingKind) -> NetConfig {
        NetConfig {
            version: CONFIG_VERSION,
            name: "tiny".into(),
            input: InputSpec {
                channels: 3,
                height: 8,
                width: 8,
                encoding: EncodingSpec {
                    kind,
                    planes: 4,
                    bits: 8,
                },
            },
            stem: vec![ConvSpec::new(4, 2)],
            blocks: vec![BlockSpec {
                name: "b1".into(),
                prunable: true,
                lwc_groups: 2,
                body: BlockBody::Layers {
                    layers: vec![ConvSpec::new(8, 2), ConvSpec::new(8, 1)],
                },
            }],
            classifier: ClassifierSpec {
                classes: 3,
                logit_scale: None,
            },
        }
    }

    pub(crate) fn images(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, &[99]);
        (0..n * 3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    fn loss_of(net: &Network, x: &[f64], labels: &[u16]) -> f64 {
        let pass = net.forward(x, labels.len(), true).unwrap();
        cross_entropy(&pass.logits, labels, net.classifier.classes).unwrap().0
    }

    fn perturb(net: &mut Network, buffer: usize, dir: &[f64], eps: f64) {
        let mut params = net.params_mut();
        match &mut params[buffer].1 {
            ParamSlice::F32(s) => s.iter_mut().zip(dir).for_each(|(w, d)| *w += (eps * d) as f32),
            ParamSlice::F64(s) => s.iter_mut().zip(dir).for_each(|(w, d)| *w += eps * d),
        }
    }

    #[test]
    fn real_mode_gradients_match_finite_differences() {
        for (cfg, seed) in [
            (tiny_config(EncodingKind::Fixed), 1),
            (tiny_config(EncodingKind::Fixed).replace_block(1, 2).unwrap(), 2),
        ] {
            let mut net = Network::new(cfg, Mode::Real, seed).unwrap();
            // keep every ReLU input far from its kink: alternate channels are
            // fully active or fully dead
            for u in &mut net.units {
                for (ch, b) in u.bn.beta.iter_mut().enumerate() {
                    *b = if ch % 4 == 3 { -6.0 } else { 6.0 };
                }
            }
            let labels = [0u16, 1, 2, 1, 0, 2];
            let x = images(labels.len(), seed);
            let pass = net.forward(&x, labels.len(), true).unwrap();
            assert!(pass.caches.iter().flat_map(|c| &c.u).all(|u| u.abs() > 0.5));
            let (_, dl) = cross_entropy(&pass.logits, &labels, 3).unwrap();
            let grads = net.backward(&pass, &dl, &SurrogateConfig::default()).unwrap();
            for (b, g) in grads.buffers.iter().enumerate() {
                let norm = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
                assert!(norm > 0.0, "buffer {b} has zero gradient");
                let dir: Vec<f64> = g.iter().map(|v| v / norm).collect();
                // f32 rounding limits small steps, curvature large ones
                let rel = [3e-2, 1e-2, 3e-3]
                    .iter()
                    .map(|&eps| {
                        let mut plus = net.clone();
                        perturb(&mut plus, b, &dir, eps);
                        let mut minus = net.clone();
                        perturb(&mut minus, b, &dir, -eps);
                        let fd = (loss_of(&plus, &x, &labels) - loss_of(&minus, &x, &labels)) / (2.0 * eps);
                        (fd - norm).abs() / norm
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(rel < 1e-4, "buffer {b}: relative error {rel}");
            }
        }
    }

    #[test]
    fn identical_batch_matches_single_sample() {
        for mode in [Mode::Real, Mode::Binary] {
            let net = Network::new(tiny_config(EncodingKind::Glt), mode, 5).unwrap();
            let one = images(1, 8);
            let many: Vec<f64> = one.iter().cycle().take(one.len() * 5).copied().collect();
            let g = |x: &[f64], n: usize| {
                let labels = vec![1u16; n];
                let pass = net.forward(x, n, true).unwrap();
                let (_, dl) = cross_entropy(&pass.logits, &labels, 3).unwrap();
                net.backward(&pass, &dl, &SurrogateConfig::default()).unwrap()
            };
            let (a, b) = (g(&one, 1), g(&many, 5));
            for (x, y) in a.buffers.iter().flatten().zip(b.buffers.iter().flatten()) {
                assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn binary_mode_runs_only_on_sign_operands() {
        let cfg = tiny_config(EncodingKind::Glt);
        let net = Network::new(cfg.clone(), Mode::Binary, 3).unwrap();
        let pass = net.forward(&images(4, 1), 4, true).unwrap();
        assert_eq!(pass.trace.real_macs, 0);
        let bops = crate::topology::count_bops(&cfg, 8, 8).unwrap();
        assert_eq!(pass.trace.binary_macs, 4 * bops);
        for k in 0..net.units.len() {
            assert!(pass.activation(k).iter().all(|v| *v == 1.0 || *v == -1.0));
        }
        assert!(pass.input_planes().iter().all(|v| *v == 1.0 || *v == -1.0));
        let real = net.to_mode(Mode::Real).forward(&images(4, 1), 4, true).unwrap();
        assert_eq!(real.trace.binary_macs, 0);
    }

    #[test]
    fn replaced_block_keeps_other_parameters() {
        let net = Network::new(tiny_config(EncodingKind::Glt), Mode::Binary, 3).unwrap();
        let r = net.with_replaced_block(1, 2, 9).unwrap();
        assert_eq!(r.units[0], net.units[0]);
        assert_eq!(r.classifier, net.classifier);
        assert_eq!(r.units.len(), 2);
        assert!(r.units[1].shape.shuffle);
        assert_eq!(r.encoder, net.encoder);
    }

    #[test]
    fn learned_encoder_receives_gradient() {
        let net = Network::new(tiny_config(EncodingKind::Glt), Mode::Binary, 4).unwrap();
        let labels = [0u16, 1, 2, 0];
        let x = images(4, 2);
        let pass = net.forward(&x, 4, true).unwrap();
        let (_, dl) = cross_entropy(&pass.logits, &labels, 3).unwrap();
        let g = net.backward(&pass, &dl, &SurrogateConfig::default()).unwrap();
        assert_eq!(g.buffers[0].len(), 3 * 5);
        assert!(g.buffers[0].iter().any(|v| *v != 0.0));
    }
}
