use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{BitSemantics, BitTensor, IntTensor, Word, WORD_BITS};
use crate::error::bail;
use crate::Result;

fn require_signed(t: &BitTensor, what: &str) -> Result<()> {
    if t.semantics() != BitSemantics::Signed {
        bail!(Dimension, "{} must have signed semantics", what);
    }
    Ok(())
}

#[inline]
fn mismatches(a: &[Word], b: &[Word]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Dot product of two sign vectors, computed as `n - 2 * popcount(a ^ b)`.
pub fn xnor_dot(a: &BitTensor, b: &BitTensor) -> Result<i32> {
    require_signed(a, "left operand")?;
    require_signed(b, "right operand")?;
    if a.shape() != b.shape() {
        bail!(Dimension, "xnor_dot shapes {:?} and {:?}", a.shape(), b.shape());
    }
    let n = a.len() as i64;
    let d = i64::from(mismatches(a.words(), b.words()));
    Ok((n - 2 * d) as i32)
}

/// Binary matrix-vector product: `out[i] = sum_j W[i, j] * x[j]` over `+-1` values.
pub fn popcount_linear(x: &BitTensor, w: &BitTensor) -> Result<IntTensor> {
    require_signed(x, "input")?;
    require_signed(w, "weights")?;
    if x.shape().len() != 1 || w.shape().len() != 2 || w.shape()[1] != x.shape()[0] {
        bail!(
            Dimension,
            "popcount_linear input {:?} vs weights {:?}",
            x.shape(),
            w.shape()
        );
    }
    let n = x.len() as i32;
    let xr = x.row(0);
    let out = (0..w.shape()[0])
        .map(|i| n - 2 * mismatches(xr, w.row(i)) as i32)
        .collect();
    IntTensor::new(&[w.shape()[0]], out)
}

/// Geometry of a binary convolution. Padded positions read as `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Grouped 2-D cross-correlation of sign tensors.
///
/// `x` is `[C_in, H, W]`, `w` is `[C_out, C_in / g, kh, kw]`; the result is
/// `[C_out, H', W']` with `H' = (H + 2p - kh) / s + 1`. Padding contributes
/// the value `-1` (bit 0).
pub fn bin_conv2d(x: &BitTensor, w: &BitTensor, p: Conv2dParams) -> Result<IntTensor> {
    PackedConv::new(w, p)?.apply(x)
}

/// Binary convolution weights repacked channel-innermost, reusable across
/// many inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedConv {
    params: Conv2dParams,
    c_out: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    wpp: usize,
    /// `[C_out, kh * kw, wpp]`
    filt: Vec<Word>,
}

impl PackedConv {
    pub fn new(w: &BitTensor, p: Conv2dParams) -> Result<Self> {
        require_signed(w, "weights")?;
        let ws = w.shape();
        if ws.len() != 4 {
            bail!(Dimension, "bin_conv2d expects [Co,Ci/g,kh,kw] weights, got {:?}", ws);
        }
        let (c_out, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if p.groups == 0 || c_out % p.groups != 0 {
            bail!(Config, "{} output channels not divisible by {} groups", c_out, p.groups);
        }
        if p.stride == 0 {
            bail!(Config, "zero stride");
        }
        let wpp = cg.div_ceil(WORD_BITS);
        let taps = kh * kw;
        let mut filt = vec![0 as Word; c_out * taps * wpp];
        for oc in 0..c_out {
            for ci in 0..cg {
                let (wi, bi) = (ci / WORD_BITS, ci % WORD_BITS);
                for ky in 0..kh {
                    let row = w.row((oc * cg + ci) * kh + ky);
                    for kx in 0..kw {
                        if (row[kx / WORD_BITS] >> (kx % WORD_BITS)) & 1 == 1 {
                            filt[(oc * taps + ky * kw + kx) * wpp + wi] |= 1 << bi;
                        }
                    }
                }
            }
        }
        Ok(Self {
            params: p,
            c_out,
            cg,
            kh,
            kw,
            wpp,
            filt,
        })
    }

    pub fn apply(&self, x: &BitTensor) -> Result<IntTensor> {
        require_signed(x, "input")?;
        let xs = x.shape();
        if xs.len() != 3 {
            bail!(Dimension, "bin_conv2d expects a [C,H,W] input, got {:?}", xs);
        }
        let p = self.params;
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, cg, kh, kw, wpp) = (self.c_out, self.cg, self.kh, self.kw, self.wpp);
        let g = p.groups;
        if c_in % g != 0 || cg * g != c_in {
            bail!(
                Config,
                "weights expect {} channels per group, input has {} channels in {} groups",
                cg,
                c_in,
                g
            );
        }
        if h + 2 * p.padding < kh || wd + 2 * p.padding < kw {
            bail!(
                Config,
                "kernel {}x{} / stride {} does not fit input {}x{}",
                kh,
                kw,
                p.stride,
                h,
                wd
            );
        }
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (wd + 2 * p.padding - kw) / p.stride + 1;
        let (ph, pw) = (h + 2 * p.padding, wd + 2 * p.padding);
        let oc_per_group = c_out / g;
        let taps = kh * kw;
        let full = (taps * cg) as i32;

        let mut out = vec![0i32; c_out * oh * ow];
        let mut pix = vec![0 as Word; ph * pw * wpp];
        for grp in 0..g {
            // channel-innermost repack of this group's input, padding ring = bit 0
            pix.iter_mut().for_each(|v| *v = 0);
            for ci in 0..cg {
                let c = grp * cg + ci;
                let (wi, bi) = (ci / WORD_BITS, ci % WORD_BITS);
                for y in 0..h {
                    let row = x.row(c * h + y);
                    let dst = (y + p.padding) * pw + p.padding;
                    for (k, &word) in row.iter().enumerate() {
                        let mut bits = word;
                        while bits != 0 {
                            let xx = k * WORD_BITS + bits.trailing_zeros() as usize;
                            pix[(dst + xx) * wpp + wi] |= 1 << bi;
                            bits &= bits - 1;
                        }
                    }
                }
            }
            for o in 0..oc_per_group {
                let oc = grp * oc_per_group + o;
                let f = &self.filt[oc * taps * wpp..(oc + 1) * taps * wpp];
                let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut d = 0u32;
                        for ky in 0..kh {
                            let row = (oy * p.stride + ky) * pw + ox * p.stride;
                            let src = &pix[row * wpp..(row + kw) * wpp];
                            d += mismatches(src, &f[ky * kw * wpp..(ky + 1) * kw * wpp]);
                        }
                        dst[oy * ow + ox] = full - 2 * d as i32;
                    }
                }
            }
        }
        IntTensor::new(&[c_out, oh, ow], out)
    }
}

/// Channel-wise comparison `bit = x >= tau[c]`, where the channel is the
/// leading dimension of `x`.
pub fn heaviside_threshold(x: &IntTensor, tau: &[i32]) -> Result<BitTensor> {
    let shape = x.shape();
    if shape.is_empty() || shape[0] != tau.len() {
        bail!(Dimension, "{} thresholds for tensor of shape {:?}", tau.len(), shape);
    }
    let per_channel = x.data().len() / tau.len().max(1);
    let mut out = BitTensor::zeros(shape, BitSemantics::Signed);
    for (c, &t) in tau.iter().enumerate() {
        for i in c * per_channel..(c + 1) * per_channel {
            if x.data()[i] >= t {
                out.set(i, true);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signs(v: &[i8]) -> BitTensor {
        BitTensor::from_signs(&[v.len()], v).unwrap()
    }

    #[test]
    fn xnor_dot_examples() {
        assert_eq!(xnor_dot(&signs(&[1, -1, 1]), &signs(&[1, 1, -1])).unwrap(), -1);
        let a: Vec<i8> = (0..64).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let na: Vec<i8> = a.iter().map(|v| -v).collect();
        assert_eq!(xnor_dot(&signs(&a), &signs(&a)).unwrap(), 64);
        assert_eq!(xnor_dot(&signs(&a), &signs(&na)).unwrap(), -64);
    }

    #[test]
    fn xnor_dot_errors() {
        assert!(matches!(
            xnor_dot(&signs(&[1, 1]), &signs(&[1, 1, 1])),
            Err(crate::Error::Dimension(_))
        ));
        let plane = BitTensor::zeros(&[2], BitSemantics::Plane01);
        assert!(xnor_dot(&plane, &signs(&[1, 1])).is_err());
    }

    #[test]
    fn linear_all_ones() {
        let x = BitTensor::from_signs(&[70], &[1; 70]).unwrap();
        let w = BitTensor::from_signs(&[3, 70], &[1; 210]).unwrap();
        assert_eq!(popcount_linear(&x, &w).unwrap().data(), &[70, 70, 70]);
    }

    #[test]
    fn conv_single_output() {
        let x = BitTensor::from_signs(&[1, 3, 3], &[1; 9]).unwrap();
        let w = BitTensor::from_signs(&[1, 1, 3, 3], &[1; 9]).unwrap();
        let y = bin_conv2d(&x, &w, Conv2dParams::new(1, 0, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9]);
    }

    #[test]
    fn conv_padding_reads_minus_one() {
        // all +1 input, all +1 weights, pad 1: the corner sees 4 real taps and 5 pads
        let x = BitTensor::from_signs(&[1, 2, 2], &[1; 4]).unwrap();
        let w = BitTensor::from_signs(&[1, 1, 3, 3], &[1; 9]).unwrap();
        let y = bin_conv2d(&x, &w, Conv2dParams::new(1, 1, 1)).unwrap();
        assert_eq!(y.data(), &[-1, -1, -1, -1]);
    }

    #[test]
    fn conv_rejects_bad_groups() {
        let x = BitTensor::zeros(&[3, 4, 4], BitSemantics::Signed);
        let w = BitTensor::zeros(&[4, 1, 3, 3], BitSemantics::Signed);
        assert!(matches!(
            bin_conv2d(&x, &w, Conv2dParams::new(1, 1, 2)),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn threshold_examples() {
        let x = IntTensor::new(&[3, 1], vec![0, 5, -3]).unwrap();
        let y = heaviside_threshold(&x, &[1, 1, 1]).unwrap();
        assert_eq!(y.to_signs(), vec![-1, 1, -1]);
        let y = heaviside_threshold(&x, &[i32::MIN; 3]).unwrap();
        assert_eq!(y.to_signs(), vec![1, 1, 1]);
        assert!(heaviside_threshold(&x, &[0, 0]).is_err());
    }
}
