//! Folding batch norm + step activation into integer thresholds, and the
//! resulting integer-only inference network.

use alloc::vec::Vec;

use super::network::{argmax_rows, BatchNorm, InputEncoder, Mode, Network, BN_EPS};
use crate::bitcore::{bin_conv2d, heaviside_threshold, popcount_linear, BitTensor, Conv2dParams, IntTensor};
use crate::encoders::{encode_thermometer, quantize_thresholds, ImageView};
use crate::error::bail;
use crate::topology::{channel_shuffle, shuffle_permutation, ConvShape};
use crate::Result;

/// Accumulators are exact for `|x| <= FOLD_RANGE`.
pub const FOLD_RANGE: i64 = 1 << 24;

/// `fires(x) = sign * x >= tau`, equal to `a * x + b >= 0` evaluated in `f64`
/// with `a = gamma / sqrt(var + eps)` and `b = beta - mean * a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldedThreshold {
    pub flip: bool,
    pub tau: i32,
}

impl FoldedThreshold {
    pub fn fires(&self, x: i32) -> bool {
        let v = if self.flip { -i64::from(x) } else { i64::from(x) };
        v >= i64::from(self.tau)
    }
}

/// Affine form `(a, b)` of a batch-norm channel in evaluation mode.
pub fn bn_affine(bn: &BatchNorm, ch: usize) -> (f64, f64) {
    let a = f64::from(bn.gamma[ch]) / libm::sqrt(f64::from(bn.running_var[ch]) + f64::from(BN_EPS));
    (a, f64::from(bn.beta[ch]) - f64::from(bn.running_mean[ch]) * a)
}

fn fold_affine(a: f64, b: f64) -> FoldedThreshold {
    let pred = |x: i64| a * x as f64 + b >= 0.0;
    let lim = FOLD_RANGE;
    if a == 0.0 || !a.is_finite() || !b.is_finite() {
        let always = a == 0.0 && b >= 0.0;
        return FoldedThreshold {
            flip: false,
            tau: if always { i32::MIN } else { i32::MAX },
        };
    }
    // Clamp the analytic guess, then step until the predicate flips exactly.
    let guess = |v: f64| (if v.is_nan() { 0.0 } else { v }).clamp(-(lim as f64), lim as f64) as i64;
    if a > 0.0 {
        let mut t = guess(libm::ceil(-b / a));
        while t > -lim && pred(t - 1) {
            t -= 1;
        }
        while t <= lim && !pred(t) {
            t += 1;
        }
        FoldedThreshold {
            flip: false,
            tau: t as i32,
        }
    } else {
        // largest x with pred(x)
        let mut t = guess(libm::floor(-b / a));
        while t < lim && pred(t + 1) {
            t += 1;
        }
        while t >= -lim && !pred(t) {
            t -= 1;
        }
        FoldedThreshold {
            flip: true,
            tau: (-t) as i32,
        }
    }
}

/// Folds every channel of an evaluation-mode batch norm followed by `sign`.
pub fn fold_batch_norm(bn: &BatchNorm) -> Vec<FoldedThreshold> {
    (0..bn.gamma.len())
        .map(|ch| {
            let (a, b) = bn_affine(bn, ch);
            fold_affine(a, b)
        })
        .collect()
}

/// Input binarization of an [`IntegerNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub enum IntegerEncoder {
    /// Thermometer thresholds in the normalized domain.
    Thresholds(Vec<Vec<f64>>),
    /// Thermometer thresholds as integer pixel codes: bit `i` is `p >= code_i`.
    Codes {
        bits: u32,
        codes: Vec<Vec<u32>>,
    },
    Base2 {
        bits: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegerLayer {
    pub shape: ConvShape,
    /// Binary weights with negative-slope channels already negated.
    pub weights: BitTensor,
    pub tau: Vec<i32>,
}

/// Binarized network whose inference uses only bit operations, integer
/// additions and comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerNetwork {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder: IntegerEncoder,
    pub layers: Vec<IntegerLayer>,
    pub classifier: BitTensor,
    pub logit_scale: f32,
}

impl IntegerNetwork {
    /// Folds a binary-mode network. With `quantize = Some(bits)`, thermometer
    /// thresholds become integer codes of a `bits`-bit pixel domain.
    pub fn fold(net: &Network, quantize: Option<u32>) -> Result<Self> {
        if net.mode != Mode::Binary {
            bail!(Config, "only binarized networks can be folded");
        }
        let c = net.config.input.channels;
        let encoder = match (&net.encoder, quantize) {
            (InputEncoder::Base2 { bits }, _) => IntegerEncoder::Base2 { bits: *bits },
            (e, None) => IntegerEncoder::Thresholds(e.thresholds(c).expect("thermometer")),
            (e, Some(bits)) => IntegerEncoder::Codes {
                bits,
                codes: e
                    .thresholds(c)
                    .expect("thermometer")
                    .iter()
                    .map(|t| quantize_thresholds(t, bits))
                    .collect(),
            },
        };
        let mut layers = Vec::with_capacity(net.units.len());
        for unit in &net.units {
            let s = unit.shape;
            let folded = unit.folded();
            let perm = shuffle_permutation(s.out_channels, if s.shuffle { s.groups } else { 1 })?;
            let mut weights = unit.binary_weights();
            let per = weights.len() / s.out_channels;
            for (j, f) in folded.iter().enumerate() {
                if f.flip {
                    let src = perm[j];
                    for i in src * per..(src + 1) * per {
                        let v = weights.get(i);
                        weights.set(i, !v);
                    }
                }
            }
            layers.push(IntegerLayer {
                shape: s,
                weights,
                tau: folded.iter().map(|f| f.tau).collect(),
            });
        }
        Ok(Self {
            channels: c,
            height: net.config.input.height,
            width: net.config.input.width,
            encoder,
            layers,
            classifier: net.classifier.binary_weights(),
            logit_scale: net.classifier.scale,
        })
    }

    /// Binary input planes (signed semantics) of one normalized image.
    pub fn encode(&self, image: ImageView<'_>) -> Result<BitTensor> {
        let planes = match &self.encoder {
            IntegerEncoder::Thresholds(t) => encode_thermometer(image, t, crate::encoders::EncodingKind::Glt)?.bits,
            IntegerEncoder::Codes { bits, codes } => {
                let top = ((1u64 << bits) - 1) as f64;
                let hw = image.dims.plane_len();
                let m = codes.first().map_or(0, Vec::len);
                let mut out = BitTensor::zeros(
                    &[self.channels * m, self.height, self.width],
                    crate::bitcore::BitSemantics::Plane01,
                );
                for (ch, code) in codes.iter().enumerate() {
                    for p in 0..hw {
                        let px = libm::rint(image.data[ch * hw + p].clamp(0.0, 1.0) * top) as u32;
                        for (i, &ci) in code.iter().enumerate() {
                            if px >= ci {
                                out.set((ch * m + i) * hw + p, true);
                            }
                        }
                    }
                }
                out
            }
            IntegerEncoder::Base2 { bits } => InputEncoder::Base2 { bits: *bits }.encode(image)?.bits,
        };
        Ok(planes.with_semantics(crate::bitcore::BitSemantics::Signed))
    }

    /// Integer class scores of one normalized image.
    pub fn scores(&self, image: ImageView<'_>) -> Result<Vec<i32>> {
        let mut x = self.encode(image)?;
        for layer in &self.layers {
            let s = layer.shape;
            let z = bin_conv2d(&x, &layer.weights, Conv2dParams::new(s.stride, s.padding, s.groups))?;
            let z = if s.shuffle {
                IntTensor::new(z.shape(), channel_shuffle(z.data(), s.out_channels, s.groups)?)?
            } else {
                z
            };
            x = heaviside_threshold(&z, &layer.tau)?;
        }
        let n = x.len();
        let flat = BitTensor::from_signs(&[n], &x.to_signs())?;
        Ok(popcount_linear(&flat, &self.classifier)?.into_data())
    }

    /// Predicted classes for `n` images `[n, C, H, W]`.
    pub fn predict(&self, images: &[f64], n: usize) -> Result<Vec<usize>> {
        let dims = crate::encoders::ImageDims::new(self.channels, self.height, self.width);
        if images.len() != n * dims.len() {
            bail!(Dimension, "{} pixels for {} images", images.len(), n);
        }
        let classes = self.classifier.shape()[0];
        let mut scores = Vec::with_capacity(n * classes);
        for i in 0..n {
            let view = ImageView::new(dims, &images[i * dims.len()..(i + 1) * dims.len()])?;
            scores.extend(self.scores(view)?.into_iter().map(|v| v as f32));
        }
        Ok(argmax_rows(&scores, classes))
    }
}
