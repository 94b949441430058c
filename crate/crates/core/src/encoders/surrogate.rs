use alloc::vec;
use alloc::vec::Vec;

use super::encode::ImageView;
use super::thermo::ThermoParams;
use crate::error::bail;
use crate::Result;

/// How the threshold gradient is scaled before reaching the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `2 / sqrt(H * W * M)`, per channel.
    Auto,
    Explicit(f64),
}

/// Bell-shaped clipped surrogate for the derivative of the step function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurrogateConfig {
    pub p: f64,
    pub m: f64,
    pub beta: BetaMode,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            m: 5.0,
            beta: BetaMode::Auto,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !(self.m > 0.0) {
            bail!(Config, "surrogate needs p > 1 and m > 0, got p={} m={}", self.p, self.m);
        }
        if let BetaMode::Explicit(b) = self.beta {
            if !b.is_finite() {
                bail!(Config, "beta must be finite");
            }
        }
        Ok(())
    }

    pub fn beta(&self, height: usize, width: usize, planes: usize) -> f64 {
        match self.beta {
            BetaMode::Auto => 2.0 / libm::sqrt((height * width * planes) as f64),
            BetaMode::Explicit(b) => b,
        }
    }
}

/// `(1/m) * min((1/p) |u|^((1-p)/p), m)`; equals exactly 1 at `u = 0`.
#[inline]
pub fn surrogate(u: f64, p: f64, m: f64) -> f64 {
    let a = libm::fabs(u);
    if a == 0.0 {
        return 1.0;
    }
    let g = if p == 2.0 {
        0.5 / libm::sqrt(a)
    } else {
        libm::pow(a, (1.0 - p) / p) / p
    };
    if g >= m {
        1.0
    } else {
        g / m
    }
}

/// Gradient of the loss with respect to the latent threshold parameters of a
/// single image. `upstream` holds `dL/dbit` for every encoded plane bit,
/// shaped `[C * M, H, W]`.
pub fn glt_backward(
    upstream: &[f32],
    image: ImageView<'_>,
    params: &ThermoParams,
    cfg: &SurrogateConfig,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.latent().len()];
    glt_backward_accumulate(upstream, image, params, cfg, &mut out)?;
    Ok(out)
}

/// Same as [`glt_backward`] but adds into `out`, for batch accumulation.
pub fn glt_backward_accumulate(
    upstream: &[f32],
    image: ImageView<'_>,
    params: &ThermoParams,
    cfg: &SurrogateConfig,
    out: &mut [f64],
) -> Result<()> {
    cfg.validate()?;
    let d = image.dims;
    let m = params.planes();
    let hw = d.height * d.width;
    if d.channels != params.channels()
        || upstream.len() != d.channels * m * hw
        || image.data.len() != d.channels * hw
        || out.len() != params.latent().len()
    {
        bail!(
            Dimension,
            "glt_backward: image {:?}, {} upstream values, {} outputs for {} channels x {} planes",
            d,
            upstream.len(),
            out.len(),
            params.channels(),
            m
        );
    }
    let beta = cfg.beta(d.height, d.width, m);
    let mut plane_grad = vec![0.0f64; m];
    for c in 0..d.channels {
        let t = params.thresholds(c);
        let latent = params.channel_latent(c);
        let sum: f64 = latent.iter().sum();
        let pixels = &image.data[c * hw..(c + 1) * hw];
        for (i, ti) in t.iter().enumerate() {
            let up = &upstream[(c * m + i) * hw..(c * m + i + 1) * hw];
            // d bit / d t_i = -surrogate(x - t_i)
            plane_grad[i] = -up
                .iter()
                .zip(pixels)
                .filter(|(g, _)| **g != 0.0)
                .map(|(g, x)| f64::from(*g) * surrogate(x - ti, cfg.p, cfg.m))
                .sum::<f64>();
        }
        // chain through d t_i / d latent_j = (1[j <= i] - t_i) / sum
        let weighted: f64 = plane_grad.iter().zip(&t).map(|(g, ti)| g * ti).sum();
        let mut suffix = 0.0;
        let dst = &mut out[c * (m + 1)..(c + 1) * (m + 1)];
        for j in (0..=m).rev() {
            if j < m {
                suffix += plane_grad[j];
            }
            dst[j] += beta * (suffix - weighted) / sum;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{threshold_jacobian, ImageDims};

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate(0.0, 2.0, 5.0), 1.0);
        assert_eq!(surrogate(1.0, 2.0, 5.0), 0.1);
        assert_eq!(surrogate(-1.0, 2.0, 5.0), 0.1);
        assert_eq!(surrogate(0.25, 2.0, 5.0), 0.2);
        // clip region: 0.5 / sqrt(u) >= 5 for u <= 0.01
        assert_eq!(surrogate(0.005, 2.0, 5.0), 1.0);
    }

    #[test]
    fn surrogate_peaks_and_decays() {
        for &p in &[1.5, 2.0, 3.0, 6.0] {
            let mut prev = surrogate(0.0, p, 5.0);
            for k in 1..2000 {
                let u = k as f64 * 1e-3;
                let v = surrogate(u, p, 5.0);
                assert!(v <= prev && v <= 1.0);
                assert_eq!(v, surrogate(-u, p, 5.0));
                prev = v;
            }
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = SurrogateConfig {
            p: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let params = ThermoParams::linear_init(1, 8, 8).unwrap();
        let img = [0.3, 0.5, 0.7, 0.9];
        let view = ImageView::new(ImageDims::new(1, 2, 2), &img).unwrap();
        let g = glt_backward(&[0.0; 32], view, &params, &SurrogateConfig::default()).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_explicit_chain_rule() {
        let mut params = ThermoParams::linear_init(2, 4, 8).unwrap();
        params.latent_mut()[2] = 0.4;
        params.latent_mut()[7] = 0.9;
        let dims = ImageDims::new(2, 3, 2);
        let img: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let up: Vec<f32> = (0..48).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.1).collect();
        let cfg = SurrogateConfig::default();
        let got = glt_backward(&up, ImageView::new(dims, &img).unwrap(), &params, &cfg).unwrap();
        let beta = 2.0 / (6.0f64 * 4.0).sqrt();
        for c in 0..2 {
            let t = params.thresholds(c);
            let jac = threshold_jacobian(params.channel_latent(c)).unwrap();
            for j in 0..5 {
                let mut want = 0.0;
                for i in 0..4 {
                    for px in 0..6 {
                        let u = img[c * 6 + px] - t[i];
                        want += f64::from(up[(c * 4 + i) * 6 + px]) * -surrogate(u, 2.0, 5.0) * jac[i * 5 + j];
                    }
                }
                want *= beta;
                assert!((got[c * 5 + j] - want).abs() < 1e-12, "c={c} j={j}");
            }
        }
    }
}
