//! Parametric texture/shape images for desk-scale experiments.
//!
//! Class `k` draws pattern kind `k mod 5` (horizontal grating, vertical
//! grating, checkerboard, concentric rings, disk) at variant `k / 5`, which
//! sets the spatial frequency or the disk radius. Each image gets a random
//! phase, position jitter, mean brightness in `[0.15, 0.55]`, contrast in
//! `[0.15, 0.35]`, a per-channel tint in `[0.7, 1]` and Gaussian pixel noise
//! (sigma 0.04) before 8-bit rounding. Labels cycle through the classes, so
//! every class appears `n / classes` or `n / classes + 1` times per split.
//! All classes are invariant under horizontal flips.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::encoders::ImageDims;
use crate::error::bail;
use crate::rng::{rng_for, stream};
use crate::Result;

pub const PATTERN_KINDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train: 5000,
            test: 1000,
            channels: 3,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

fn pattern(kind: usize, variant: usize, y: f64, x: f64, phase: f64, jitter: (f64, f64)) -> f64 {
    let freq = 2.0 + 2.0 * variant as f64;
    let wave = |t: f64| 0.5 + 0.5 * libm::sin(2.0 * PI * freq * t + phase);
    let (cy, cx) = (y - 0.5 - jitter.0, x - 0.5 - jitter.1);
    let r = libm::sqrt(cy * cy + cx * cx);
    match kind {
        0 => wave(y),
        1 => wave(x),
        2 => {
            let a = libm::sin(2.0 * PI * freq * y + phase) * libm::sin(2.0 * PI * freq * x);
            if a >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        3 => wave(r),
        _ => {
            let radius = 0.18 + 0.14 * (variant % 2) as f64 + 0.05 * (variant / 2) as f64;
            if r <= radius {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn render(spec: &SyntheticSpec, label: usize, rng: &mut impl Rng, out: &mut Vec<u8>) {
    let (kind, variant) = (label % PATTERN_KINDS, label / PATTERN_KINDS);
    let phase = rng.gen_range(0.0..2.0 * PI);
    // vertical jitter only, so horizontal flips stay inside the class
    let jitter = (rng.gen_range(-0.12..0.12), 0.0);
    let brightness = rng.gen_range(0.15..0.55);
    let contrast = rng.gen_range(0.15..0.35);
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let (h, w) = (spec.height, spec.width);
    for _ in 0..spec.channels {
        let tint: f64 = rng.gen_range(0.7..1.0);
        for yy in 0..h {
            for xx in 0..w {
                let y = (yy as f64 + 0.5) / h as f64;
                let x = (xx as f64 + 0.5) / w as f64;
                let f = pattern(kind, variant, y, x, phase, jitter);
                let v = (brightness + contrast * (f - 0.5)) * tint + noise.sample(rng);
                out.push(libm::rint(v.clamp(0.0, 1.0) * 255.0) as u8);
            }
        }
    }
}

/// Deterministic synthetic dataset: `train` records tagged train followed by
/// `test` records tagged test.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.channels == 0 || spec.height < 4 || spec.width < 4 {
        bail!(Config, "synthetic data needs >= 2 classes and images of at least 4x4");
    }
    let dims = ImageDims::new(spec.channels, spec.height, spec.width);
    let n = spec.train + spec.test;
    let mut images = Vec::with_capacity(n * dims.len());
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for i in 0..n {
        let (split, j) = if i < spec.train {
            (Split::Train, i)
        } else {
            (Split::Test, i - spec.train)
        };
        let label = j % spec.classes;
        let mut rng = rng_for(spec.seed, &[stream::SYNTHETIC, u64::from(split.code()), j as u64]);
        render(spec, label, &mut rng, &mut images);
        labels.push(label as u16);
        splits.push(split);
    }
    Dataset::new(dims, 8, spec.classes, images, labels, splits)
}
