//! Functional model of a programmable-slope ramp ADC.
//!
//! For each pixel the DAC steps through the `M` threshold codes of its
//! channel and an ideal comparator emits `v >= code / (2^Nb - 1)` per step,
//! so the output column is the thermometer code of the pixel. Optional
//! non-idealities: additive Gaussian noise on the compared voltage and
//! independent output bit flips. Noise draws come from a stream keyed by
//! `(seed, channel, pixel, plane)` and do not depend on visiting order.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bitcore::{BitSemantics, BitTensor};
use crate::encoders::{EncodedPlanes, EncodingKind, ImageView};
use crate::error::bail;
use crate::rng::{rng_for, stream};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcNoise {
    /// Standard deviation of the comparator input noise (normalized volts).
    pub sigma: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

/// Statistics of one frame conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConversionReport {
    pub pixels: usize,
    pub comparisons: usize,
    /// Pixel columns that are not thermometric.
    pub violations: usize,
    /// Output bits that differ from the noiseless conversion.
    pub bit_errors: usize,
    /// Pixels clamped into `[0, 1]`.
    pub clamped: usize,
}

impl ConversionReport {
    pub fn bit_error_rate(&self) -> f64 {
        if self.comparisons == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.comparisons as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampAdc {
    bits: u32,
    /// Per channel, `M` non-decreasing DAC codes.
    codes: Vec<Vec<u32>>,
    noise: Option<AdcNoise>,
}

impl RampAdc {
    pub fn new(bits: u32, codes: Vec<Vec<u32>>) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            bail!(Config, "DAC resolution must be 1..=16 bits, got {}", bits);
        }
        let m = codes.first().map_or(0, Vec::len);
        if m == 0 {
            bail!(Config, "empty threshold code table");
        }
        let top = (1u32 << bits) - 1;
        for (c, ch) in codes.iter().enumerate() {
            if ch.len() != m {
                bail!(Dimension, "channel {} has {} codes, expected {}", c, ch.len(), m);
            }
            if let Some(v) = ch.iter().find(|v| **v > top) {
                bail!(Domain, "channel {}: code {} exceeds {} bits", c, v, bits);
            }
            if ch.windows(2).any(|w| w[0] > w[1]) {
                bail!(Domain, "channel {}: codes must be non-decreasing", c);
            }
        }
        Ok(Self {
            bits,
            codes,
            noise: None,
        })
    }

    pub fn with_noise(mut self, noise: AdcNoise) -> Result<Self> {
        if !(noise.sigma >= 0.0) || !(0.0..=1.0).contains(&noise.flip_prob) {
            bail!(Config, "noise needs sigma >= 0 and flip probability in [0, 1]");
        }
        self.noise = Some(noise);
        Ok(self)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codes(&self) -> &[Vec<u32>] {
        &self.codes
    }

    pub fn channels(&self) -> usize {
        self.codes.len()
    }

    pub fn planes(&self) -> usize {
        self.codes[0].len()
    }

    /// Normalized DAC voltage of a code.
    pub fn voltage(&self, code: u32) -> f64 {
        f64::from(code) / f64::from((1u32 << self.bits) - 1)
    }

    /// Converts one pixel of `channel`; `pixel` keys the noise stream.
    /// Returns the `M` output bits, lowest threshold first.
    pub fn convert_pixel(&self, v: f64, channel: usize, pixel: usize) -> Vec<bool> {
        let mut out = vec![false; self.planes()];
        self.convert_into(v, channel, pixel, &mut out);
        out
    }

    /// Returns the number of comparisons performed.
    fn convert_into(&self, v: f64, channel: usize, pixel: usize, out: &mut [bool]) -> usize {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        for (i, (&code, bit)) in self.codes[channel].iter().zip(out.iter_mut()).enumerate() {
            let t = self.voltage(code);
            *bit = match self.noise {
                None => v >= t,
                Some(n) => {
                    let mut rng = rng_for(n.seed, &[stream::ADC_NOISE, channel as u64, pixel as u64, i as u64]);
                    let e: f64 = rng.sample(StandardNormal);
                    let b = v + n.sigma * e >= t;
                    let flip = n.flip_prob > 0.0 && rng.gen::<f64>() < n.flip_prob;
                    b ^ flip
                }
            };
        }
        self.codes[channel].len()
    }

    /// Converts a `[C, H, W]` frame into channel-major planes.
    pub fn convert_frame(&self, image: ImageView<'_>) -> Result<(EncodedPlanes, ConversionReport)> {
        let d = image.dims;
        if d.channels != self.channels() {
            bail!(
                Dimension,
                "frame has {} channels, ADC has code tables for {}",
                d.channels,
                self.channels()
            );
        }
        let m = self.planes();
        let hw = d.plane_len();
        let mut bits = BitTensor::zeros(&[d.channels * m, d.height, d.width], BitSemantics::Plane01);
        let mut report = ConversionReport {
            pixels: d.len(),
            ..Default::default()
        };
        let mut col = vec![false; m];
        for c in 0..d.channels {
            for p in 0..hw {
                let v = image.data[c * hw + p];
                if !(0.0..=1.0).contains(&v) {
                    report.clamped += 1;
                }
                report.comparisons += self.convert_into(v, c, p, &mut col);
                if col.windows(2).any(|w| !w[0] && w[1]) {
                    report.violations += 1;
                }
                if self.noise.is_some() {
                    let clean = v.clamp(0.0, 1.0);
                    report.bit_errors += self.codes[c]
                        .iter()
                        .zip(&col)
                        .filter(|(code, b)| (clean >= self.voltage(**code)) != **b)
                        .count();
                }
                for (i, b) in col.iter().enumerate() {
                    if *b {
                        bits.set((c * m + i) * hw + p, true);
                    }
                }
            }
        }
        Ok((
            EncodedPlanes {
                kind: EncodingKind::Glt,
                channels: d.channels,
                planes_per_channel: m,
                bits,
                clamped: report.clamped,
            },
            report,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_thermometer, linear_ramp, quantize_thresholds, ImageDims};

    fn ramp_adc(channels: usize) -> RampAdc {
        RampAdc::new(8, vec![quantize_thresholds(&linear_ramp(8, 8), 8); channels]).unwrap()
    }

    #[test]
    fn converts_like_the_thermometer_encoder() {
        let adc = ramp_adc(1);
        assert_eq!(adc.codes()[0], vec![16, 48, 80, 112, 144, 176, 208, 240]);
        let b: Vec<u8> = adc
            .convert_pixel(100.0 / 255.0, 0, 0)
            .iter()
            .map(|b| u8::from(*b))
            .collect();
        assert_eq!(b, vec![1, 1, 1, 0, 0, 0, 0, 0]);
        assert!(adc.convert_pixel(0.0, 0, 0).iter().all(|b| !b));
        assert!(adc.convert_pixel(1.0, 0, 0).iter().all(|b| *b));
    }

    #[test]
    fn frame_matches_pixel_calls_and_counts_comparisons() {
        let adc = ramp_adc(2);
        let dims = ImageDims::new(2, 2, 2);
        let data = [0.0, 0.3, 0.5, 1.0, 0.9, 0.1, 0.62, 0.2];
        let (planes, report) = adc.convert_frame(ImageView::new(dims, &data).unwrap()).unwrap();
        assert_eq!(report.comparisons, 8 * 8);
        assert_eq!(report.violations, 0);
        for c in 0..2 {
            for p in 0..4 {
                let col = adc.convert_pixel(data[c * 4 + p], c, p);
                for (i, b) in col.iter().enumerate() {
                    assert_eq!(planes.bits.get((c * 8 + i) * 4 + p), *b);
                }
            }
        }
        let t: Vec<Vec<f64>> = adc
            .codes()
            .iter()
            .map(|c| c.iter().map(|v| adc.voltage(*v)).collect())
            .collect();
        let sw = encode_thermometer(ImageView::new(dims, &data).unwrap(), &t, EncodingKind::Glt).unwrap();
        assert_eq!(sw.bits, planes.bits);
    }

    #[test]
    fn certain_flips_complement_the_output() {
        let clean = ramp_adc(1);
        let noisy = ramp_adc(1)
            .with_noise(AdcNoise {
                sigma: 0.0,
                flip_prob: 1.0,
                seed: 3,
            })
            .unwrap();
        let dims = ImageDims::new(1, 3, 3);
        let data: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let view = ImageView::new(dims, &data).unwrap();
        let (a, _) = clean.convert_frame(view).unwrap();
        let (b, r) = noisy.convert_frame(view).unwrap();
        assert_eq!(b.bits, a.bits.complement());
        assert_eq!(r.bit_errors, r.comparisons);
        assert_eq!(r.bit_error_rate(), 1.0);
    }

    #[test]
    fn comparator_noise_breaks_monotonicity_and_is_reported() {
        let adc = ramp_adc(1)
            .with_noise(AdcNoise {
                sigma: 0.2,
                flip_prob: 0.0,
                seed: 9,
            })
            .unwrap();
        let dims = ImageDims::new(1, 16, 16);
        let data: Vec<f64> = (0..256).map(|i| i as f64 / 255.0).collect();
        let view = ImageView::new(dims, &data).unwrap();
        let (planes, r) = adc.convert_frame(view).unwrap();
        assert!(r.violations > 0);
        assert_eq!(r.violations, planes.thermometric_violations());
        assert!(r.bit_errors > 0);
        // reproducible
        assert_eq!(adc.convert_frame(view).unwrap().1, r);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(RampAdc::new(8, vec![vec![3, 2]]).is_err());
        assert!(RampAdc::new(4, vec![vec![3, 20]]).is_err());
        assert!(RampAdc::new(8, vec![vec![1, 2], vec![1]]).is_err());
        assert!(ramp_adc(3)
            .convert_frame(ImageView::new(ImageDims::new(1, 1, 1), &[0.5]).unwrap())
            .is_err());
    }
}
