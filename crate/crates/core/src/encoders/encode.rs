use alloc::vec::Vec;

use crate::bitcore::{BitSemantics, BitTensor};
use crate::error::bail;
use crate::Result;

/// Image geometry, channel-major `[C, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ImageDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

/// Borrowed normalized image.
#[derive(Debug, Clone, Copy)]
pub struct ImageView<'a> {
    pub dims: ImageDims,
    pub data: &'a [f64],
}

impl<'a> ImageView<'a> {
    pub fn new(dims: ImageDims, data: &'a [f64]) -> Result<Self> {
        if data.len() != dims.len() {
            bail!(Dimension, "{} pixels for image {:?}", data.len(), dims);
        }
        Ok(Self { dims, data })
    }
}

/// Which encoder produced a set of planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    /// Learned thermometer.
    Glt,
    /// Fixed linear-ramp thermometer.
    Fixed,
    /// Base-2 fixed-point bit planes.
    Base2,
}

impl EncodingKind {
    pub fn code(self) -> u8 {
        match self {
            EncodingKind::Glt => 0,
            EncodingKind::Fixed => 1,
            EncodingKind::Base2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EncodingKind::Glt),
            1 => Some(EncodingKind::Fixed),
            2 => Some(EncodingKind::Base2),
            _ => None,
        }
    }

    pub fn is_thermometer(self) -> bool {
        !matches!(self, EncodingKind::Base2)
    }
}

/// `{0, 1}` planes `[C * M, H, W]`, channel-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPlanes {
    pub kind: EncodingKind,
    pub channels: usize,
    pub planes_per_channel: usize,
    pub bits: BitTensor,
    /// Pixels outside `[0, 1]` that were clamped before encoding.
    pub clamped: usize,
}

impl EncodedPlanes {
    pub fn height(&self) -> usize {
        self.bits.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.bits.shape()[2]
    }

    /// Bit of plane `i` of channel `c` at pixel `(y, x)`.
    pub fn bit(&self, c: usize, i: usize, y: usize, x: usize) -> bool {
        let (h, w) = (self.height(), self.width());
        self.bits.get(((c * self.planes_per_channel + i) * h + y) * w + x)
    }

    /// Every pixel's plane column is of the form `1...10...0`.
    pub fn is_thermometric(&self) -> bool {
        self.thermometric_violations() == 0
    }

    /// Number of pixel columns that are not of the form `1...10...0`.
    pub fn thermometric_violations(&self) -> usize {
        let (h, w) = (self.height(), self.width());
        let mut bad = 0;
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut seen_zero = false;
                    for i in 0..self.planes_per_channel {
                        let b = self.bit(c, i, y, x);
                        if b && seen_zero {
                            bad += 1;
                            break;
                        }
                        seen_zero |= !b;
                    }
                }
            }
        }
        bad
    }
}

/// `t_i = s (i - 1/2) / (2^Nb - 1)` with `s = 2^Nb / M`.
pub fn linear_ramp(planes: usize, bits: u32) -> Vec<f64> {
    let levels = (1u64 << bits) as f64;
    let s = levels / planes as f64;
    (1..=planes).map(|i| s * (i as f64 - 0.5) / (levels - 1.0)).collect()
}

/// Elementwise `x^gamma`, undoing a display gamma of `gamma`.
pub fn gamma_inverse(x: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    libm::pow(x, gamma)
}

/// Nearest `Nb`-bit code for each threshold, ties to even.
pub fn quantize_thresholds(t: &[f64], bits: u32) -> Vec<u32> {
    let top = ((1u64 << bits) - 1) as f64;
    t.iter().map(|v| libm::rint((v * top).clamp(0.0, top)) as u32).collect()
}

fn check_increasing(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        bail!(Dimension, "empty threshold vector");
    }
    if t.windows(2).any(|w| !(w[0] < w[1])) || t.iter().any(|v| !v.is_finite()) {
        bail!(Domain, "thresholds must be strictly increasing and finite");
    }
    Ok(())
}

/// Thermometer encoding: plane `i` of channel `c` is `x >= t[c][i]`.
///
/// Pixels outside `[0, 1]` (and NaN, read as 0) are clamped and counted.
pub fn encode_thermometer(image: ImageView<'_>, thresholds: &[Vec<f64>], kind: EncodingKind) -> Result<EncodedPlanes> {
    let d = image.dims;
    if thresholds.len() != d.channels {
        bail!(
            Dimension,
            "{} threshold vectors for {} channels",
            thresholds.len(),
            d.channels
        );
    }
    let m = thresholds[0].len();
    for t in thresholds {
        if t.len() != m {
            bail!(Dimension, "all channels need the same number of planes");
        }
        check_increasing(t)?;
    }
    let hw = d.plane_len();
    let mut bits = BitTensor::zeros(&[d.channels * m, d.height, d.width], BitSemantics::Plane01);
    let mut clamped = 0;
    for (c, (plane, t)) in image.data.chunks(hw.max(1)).zip(thresholds).enumerate() {
        for (p, &raw) in plane.iter().enumerate() {
            let x = if (0.0..=1.0).contains(&raw) {
                raw
            } else {
                clamped += 1;
                if raw > 1.0 {
                    1.0
                } else {
                    0.0
                }
            };
            for (i, &ti) in t.iter().enumerate() {
                if x >= ti {
                    bits.set((c * m + i) * hw + p, true);
                } else {
                    break;
                }
            }
        }
    }
    Ok(EncodedPlanes {
        kind,
        channels: d.channels,
        planes_per_channel: m,
        bits,
        clamped,
    })
}

/// Thermometer encoding with the fixed linear ramp on every channel.
pub fn encode_fixed_thermometer(image: ImageView<'_>, planes: usize, bits: u32) -> Result<EncodedPlanes> {
    if planes == 0 {
        bail!(Config, "zero planes");
    }
    let ramp = linear_ramp(planes, bits);
    let t: Vec<Vec<f64>> = (0..image.dims.channels).map(|_| ramp.clone()).collect();
    encode_thermometer(image, &t, EncodingKind::Fixed)
}

/// Base-2 planes of integer pixels; plane 1 is the least significant bit.
pub fn encode_base2(pixels: &[u32], dims: ImageDims, bits: u32) -> Result<EncodedPlanes> {
    if pixels.len() != dims.len() {
        bail!(Dimension, "{} pixels for image {:?}", pixels.len(), dims);
    }
    if bits == 0 || bits > 31 {
        bail!(Config, "unsupported bit depth {}", bits);
    }
    let m = bits as usize;
    let hw = dims.plane_len();
    let mut out = BitTensor::zeros(&[dims.channels * m, dims.height, dims.width], BitSemantics::Plane01);
    for c in 0..dims.channels {
        for p in 0..hw {
            let v = pixels[c * hw + p];
            if v >> bits != 0 {
                bail!(Domain, "pixel {} of channel {} is {}, exceeds {} bits", p, c, v, bits);
            }
            for i in 0..m {
                if (v >> i) & 1 == 1 {
                    out.set((c * m + i) * hw + p, true);
                }
            }
        }
    }
    Ok(EncodedPlanes {
        kind: EncodingKind::Base2,
        channels: dims.channels,
        planes_per_channel: m,
        bits: out,
        clamped: 0,
    })
}
