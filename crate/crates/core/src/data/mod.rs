//! Datasets of integer images, augmentation and the synthetic benchmark.
//!
//! Images are stored as `[C, H, W]` integer pixels of `bits` bits. They are
//! normalized to `[0, 1]` exactly once, right before encoding, with optional
//! gamma inversion applied after normalization.

mod augment;
mod synthetic;

pub use augment::{AugmentConfig, AugmentPlan};
pub use synthetic::{make_synthetic, SyntheticSpec, PATTERN_KINDS};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{gamma_inverse, ImageDims};
use crate::error::bail;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Labelled integer images with a split tag per record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub dims: ImageDims,
    pub bits: u32,
    pub classes: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Validates sizes, pixel range and labels; errors name the first
    /// offending record.
    pub fn new(
        dims: ImageDims,
        bits: u32,
        classes: usize,
        images: Vec<u8>,
        labels: Vec<u16>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            bail!(Config, "pixel depth must be 1..=8 bits, got {}", bits);
        }
        if dims.is_empty() || classes == 0 {
            bail!(Config, "empty image dimensions or zero classes");
        }
        let n = labels.len();
        if images.len() != n * dims.len() || splits.len() != n {
            bail!(
                Dimension,
                "{} pixels, {} labels and {} split tags do not describe {} images of {:?}",
                images.len(),
                n,
                splits.len(),
                n,
                dims
            );
        }
        let max = ((1u32 << bits) - 1) as u8;
        if let Some(p) = images.iter().position(|v| *v > max) {
            bail!(
                Domain,
                "record {}: pixel value {} exceeds {} bits",
                p / dims.len(),
                images[p],
                bits
            );
        }
        if let Some(i) = labels.iter().position(|l| usize::from(*l) >= classes) {
            bail!(
                Domain,
                "record {}: label {} is not below {} classes",
                i,
                labels[i],
                classes
            );
        }
        Ok(Self {
            dims,
            bits,
            classes,
            images,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * self.dims.len()..(i + 1) * self.dims.len()]
    }

    pub fn max_value(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Record indices of one split, in storage order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|i| self.splits[*i] == split).collect()
    }

    pub fn class_histogram(&self, split: Split) -> Vec<usize> {
        let mut h = alloc::vec![0; self.classes];
        for i in self.indices(split) {
            h[usize::from(self.labels[i])] += 1;
        }
        h
    }

    /// Appends `pixels` normalized to `[0, 1]` and, with `gamma != 1`,
    /// raised to `gamma`.
    pub fn normalize_into(&self, pixels: &[u8], gamma: f64, out: &mut Vec<f64>) {
        let top = f64::from(self.max_value());
        out.extend(pixels.iter().map(|p| {
            let x = f64::from(*p) / top;
            if gamma == 1.0 {
                x
            } else {
                gamma_inverse(x, gamma)
            }
        }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> Dataset {
        Dataset::new(
            ImageDims::new(1, 2, 2),
            8,
            2,
            vec![0, 255, 128, 64, 1, 2, 3, 4],
            vec![0, 1],
            vec![Split::Train, Split::Test],
        )
        .unwrap()
    }

    #[test]
    fn validation_names_offending_record() {
        let e = Dataset::new(
            ImageDims::new(1, 1, 2),
            8,
            2,
            vec![0, 0, 0, 0],
            vec![0, 2],
            vec![Split::Train; 2],
        )
        .unwrap_err();
        assert!(alloc::format!("{e}").contains("record 1"), "{e}");
        let e = Dataset::new(
            ImageDims::new(1, 1, 2),
            4,
            2,
            vec![0, 0, 16, 0],
            vec![0, 1],
            vec![Split::Train; 2],
        )
        .unwrap_err();
        assert!(alloc::format!("{e}").contains("record 1"), "{e}");
    }

    #[test]
    fn normalization_and_gamma() {
        let d = tiny();
        let mut out = Vec::new();
        d.normalize_into(d.image(0), 1.0, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 1.0);
        out.clear();
        d.normalize_into(d.image(0), 2.2, &mut out);
        assert_eq!(out[1], 1.0);
        assert!((out[2] - libm::pow(128.0 / 255.0, 2.2)).abs() < 1e-15);
        assert_eq!(d.indices(Split::Test), vec![1]);
    }
}
