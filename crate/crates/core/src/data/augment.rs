use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::ImageDims;
use crate::error::bail;
use crate::Result;

/// Random pad-and-crop with zero padding, horizontal flip and cutout.
/// Zero values disable a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub pad: usize,
    pub flip: bool,
    pub cutout: usize,
    /// Output size `(height, width)`; the input size when absent.
    pub crop: Option<(usize, usize)>,
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPlan {
    /// Top-left corner of the crop inside the padded image.
    pub offset: (usize, usize),
    pub flip: bool,
    /// Top-left corner of the cutout square in the output.
    pub cutout: Option<(usize, usize)>,
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.pad == 0 && !self.flip && self.cutout == 0 && self.crop.is_none()
    }

    pub fn output_dims(&self, dims: ImageDims) -> Result<ImageDims> {
        let (h, w) = self.crop.unwrap_or((dims.height, dims.width));
        if h == 0 || w == 0 || h > dims.height + 2 * self.pad || w > dims.width + 2 * self.pad {
            bail!(
                Config,
                "crop {}x{} does not fit a {}-padded {}x{} image",
                h,
                w,
                self.pad,
                dims.height,
                dims.width
            );
        }
        if self.cutout > h || self.cutout > w {
            bail!(Config, "cutout {} is larger than the {}x{} image", self.cutout, h, w);
        }
        Ok(ImageDims::new(dims.channels, h, w))
    }

    /// Plan that reproduces the input: centered crop, no flip, no cutout.
    pub fn identity_plan(&self, dims: ImageDims) -> Result<AugmentPlan> {
        let out = self.output_dims(dims)?;
        Ok(AugmentPlan {
            offset: (
                (dims.height + 2 * self.pad - out.height) / 2,
                (dims.width + 2 * self.pad - out.width) / 2,
            ),
            flip: false,
            cutout: None,
        })
    }

    pub fn sample(&self, dims: ImageDims, rng: &mut impl Rng) -> Result<AugmentPlan> {
        let out = self.output_dims(dims)?;
        let oy = rng.gen_range(0..=dims.height + 2 * self.pad - out.height);
        let ox = rng.gen_range(0..=dims.width + 2 * self.pad - out.width);
        let flip = self.flip && rng.gen_bool(0.5);
        let cutout = (self.cutout > 0).then(|| {
            (
                rng.gen_range(0..=out.height - self.cutout),
                rng.gen_range(0..=out.width - self.cutout),
            )
        });
        Ok(AugmentPlan {
            offset: (oy, ox),
            flip,
            cutout,
        })
    }

    /// Applies `plan` to a `[C, H, W]` image.
    pub fn apply(&self, image: &[u8], dims: ImageDims, plan: &AugmentPlan) -> Result<Vec<u8>> {
        if image.len() != dims.len() {
            bail!(Dimension, "{} pixels for {:?}", image.len(), dims);
        }
        let out = self.output_dims(dims)?;
        let (oy, ox) = plan.offset;
        if oy + out.height > dims.height + 2 * self.pad || ox + out.width > dims.width + 2 * self.pad {
            bail!(Config, "crop offset {:?} out of range", plan.offset);
        }
        let mut res = vec![0u8; out.len()];
        for c in 0..dims.channels {
            for y in 0..out.height {
                let sy = (y + oy) as isize - self.pad as isize;
                if sy < 0 || sy >= dims.height as isize {
                    continue;
                }
                for x in 0..out.width {
                    let sx0 = (x + ox) as isize - self.pad as isize;
                    if sx0 < 0 || sx0 >= dims.width as isize {
                        continue;
                    }
                    let dx = if plan.flip { out.width - 1 - x } else { x };
                    res[(c * out.height + y) * out.width + dx] =
                        image[(c * dims.height + sy as usize) * dims.width + sx0 as usize];
                }
            }
        }
        if let Some((cy, cx)) = plan.cutout {
            let s = self.cutout;
            if cy + s > out.height || cx + s > out.width {
                bail!(Config, "cutout at {:?} leaves the image", plan.cutout);
            }
            for c in 0..dims.channels {
                for y in cy..cy + s {
                    let row = (c * out.height + y) * out.width;
                    res[row + cx..row + cx + s].fill(0);
                }
            }
        }
        Ok(res)
    }

    pub fn augment(&self, image: &[u8], dims: ImageDims, rng: &mut impl Rng) -> Result<Vec<u8>> {
        let plan = self.sample(dims, rng)?;
        self.apply(image, dims, &plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn ramp(dims: ImageDims) -> Vec<u8> {
        (0..dims.len()).map(|i| (i % 251) as u8 + 1).collect()
    }

    #[test]
    fn flip_twice_is_identity() {
        let dims = ImageDims::new(3, 5, 7);
        let img = ramp(dims);
        let cfg = AugmentConfig {
            flip: true,
            ..Default::default()
        };
        let plan = AugmentPlan {
            offset: (0, 0),
            flip: true,
            cutout: None,
        };
        let once = cfg.apply(&img, dims, &plan).unwrap();
        assert_ne!(once, img);
        assert_eq!(cfg.apply(&once, dims, &plan).unwrap(), img);
    }

    #[test]
    fn centered_pad_crop_is_identity() {
        let dims = ImageDims::new(3, 96, 96);
        let img = ramp(dims);
        let cfg = AugmentConfig {
            pad: 12,
            ..Default::default()
        };
        let plan = cfg.identity_plan(dims).unwrap();
        assert_eq!(plan.offset, (12, 12));
        assert_eq!(cfg.apply(&img, dims, &plan).unwrap(), img);
    }

    #[test]
    fn cutout_zeroes_exact_square() {
        let dims = ImageDims::new(3, 96, 96);
        let img = ramp(dims);
        let cfg = AugmentConfig {
            cutout: 24,
            ..Default::default()
        };
        let mut rng = rng_for(1, &[]);
        for _ in 0..20 {
            let out = cfg.augment(&img, dims, &mut rng).unwrap();
            for c in 0..3 {
                let zeros = out[c * 96 * 96..(c + 1) * 96 * 96].iter().filter(|v| **v == 0).count();
                assert_eq!(zeros, 576);
            }
        }
    }

    #[test]
    fn oversized_cutout_is_config_error() {
        let cfg = AugmentConfig {
            cutout: 40,
            ..Default::default()
        };
        assert!(matches!(
            cfg.output_dims(ImageDims::new(1, 32, 32)),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn padding_is_zero_filled() {
        let dims = ImageDims::new(1, 4, 4);
        let img = vec![9u8; 16];
        let cfg = AugmentConfig {
            pad: 2,
            ..Default::default()
        };
        let plan = AugmentPlan {
            offset: (0, 0),
            flip: false,
            cutout: None,
        };
        let out = cfg.apply(&img, dims, &plan).unwrap();
        assert_eq!(&out[..4], &[0, 0, 0, 0]);
        assert_eq!(&out[8..12], &[0, 0, 9, 9]);
    }
}
