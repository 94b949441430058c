use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::Result;

/// Lower bound kept on every latent threshold parameter.
pub const DEFAULT_EPSILON_MIN: f64 = 0.05;

/// Maps a positive latent vector of length `M + 1` to `M` thresholds:
/// normalize to unit sum, then take the running sum of the first `M` terms.
pub fn thresholds_from_latent(latent: &[f64]) -> Result<Vec<f64>> {
    if latent.len() < 2 {
        bail!(
            Dimension,
            "latent vector needs at least 2 entries, got {}",
            latent.len()
        );
    }
    if let Some((i, v)) = latent.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        bail!(Domain, "latent threshold {} is {}, must be positive", i, v);
    }
    let sum: f64 = latent.iter().sum();
    let mut acc = 0.0;
    Ok(latent[..latent.len() - 1]
        .iter()
        .map(|v| {
            acc += v;
            acc / sum
        })
        .collect())
}

/// Jacobian `d t_i / d latent_j = (1[j <= i] - t_i) / sum(latent)`, row-major
/// `M x (M + 1)`.
pub fn threshold_jacobian(latent: &[f64]) -> Result<Vec<f64>> {
    let t = thresholds_from_latent(latent)?;
    let sum: f64 = latent.iter().sum();
    let cols = latent.len();
    let mut jac = vec![0.0; t.len() * cols];
    for (i, ti) in t.iter().enumerate() {
        for j in 0..cols {
            let ind = if j <= i { 1.0 } else { 0.0 };
            jac[i * cols + j] = (ind - ti) / sum;
        }
    }
    Ok(jac)
}

/// Latent initialization reproducing the linear ramp `t_i = s (i - 1/2) / (2^Nb - 1)`
/// with `s = 2^Nb / M`, scaled by `k` (default `M / 1280`).
pub fn glt_init(planes: usize, bits: u32, k: Option<f64>) -> Result<Vec<f64>> {
    glt_init_checked(planes, bits, k, DEFAULT_EPSILON_MIN)
}

fn glt_init_checked(planes: usize, bits: u32, k: Option<f64>, eps: f64) -> Result<Vec<f64>> {
    if planes == 0 || !(1..=24).contains(&bits) {
        bail!(Init, "unsupported planes={} bits={}", planes, bits);
    }
    let levels = 1usize << bits;
    if levels % planes != 0 {
        bail!(Init, "{} planes do not divide 2^{} levels", planes, bits);
    }
    let s = (levels / planes) as f64;
    let k = k.unwrap_or(planes as f64 / 1280.0);
    let mut latent = Vec::with_capacity(planes + 1);
    latent.push(0.5 * s * k);
    latent.extend(core::iter::repeat(s * k).take(planes - 1));
    latent.push((0.5 * s - 1.0) * k);
    if let Some((i, v)) = latent.iter().enumerate().find(|(_, v)| **v <= eps) {
        bail!(
            Init,
            "latent {} = {} is not above {} (planes={}, bits={}, k={})",
            i,
            v,
            eps,
            planes,
            bits,
            k
        );
    }
    Ok(latent)
}

/// Per-channel learnable thermometer thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoParams {
    channels: usize,
    planes: usize,
    bits: u32,
    epsilon_min: f64,
    latent: Vec<f64>,
}

impl ThermoParams {
    /// Every channel initialized to the linear ramp.
    pub fn linear_init(channels: usize, planes: usize, bits: u32) -> Result<Self> {
        Self::with_scale(channels, planes, bits, None)
    }

    pub fn with_scale(channels: usize, planes: usize, bits: u32, k: Option<f64>) -> Result<Self> {
        if channels == 0 {
            bail!(Init, "zero channels");
        }
        let one = glt_init_checked(planes, bits, k, DEFAULT_EPSILON_MIN)?;
        Ok(Self {
            channels,
            planes,
            bits,
            epsilon_min: DEFAULT_EPSILON_MIN,
            latent: one.repeat(channels),
        })
    }

    /// Rebuilds from stored latents; every value must respect `epsilon_min`.
    pub fn from_latent(channels: usize, planes: usize, bits: u32, epsilon_min: f64, latent: Vec<f64>) -> Result<Self> {
        if latent.len() != channels * (planes + 1) {
            bail!(
                Dimension,
                "{} latents for {} channels x {} planes",
                latent.len(),
                channels,
                planes
            );
        }
        if let Some(v) = latent.iter().find(|v| !(**v >= epsilon_min)) {
            bail!(Domain, "latent {} below minimum {}", v, epsilon_min);
        }
        Ok(Self {
            channels,
            planes,
            bits,
            epsilon_min,
            latent,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn epsilon_min(&self) -> f64 {
        self.epsilon_min
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn latent_mut(&mut self) -> &mut [f64] {
        &mut self.latent
    }

    pub fn channel_latent(&self, c: usize) -> &[f64] {
        let n = self.planes + 1;
        &self.latent[c * n..(c + 1) * n]
    }

    pub fn thresholds(&self, c: usize) -> Vec<f64> {
        thresholds_from_latent(self.channel_latent(c)).expect("latent invariant violated")
    }

    pub fn all_thresholds(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.thresholds(c)).collect()
    }

    /// Clips every latent to at least `epsilon_min`.
    pub fn project(&mut self) {
        let eps = self.epsilon_min;
        for v in &mut self.latent {
            if !(*v >= eps) {
                *v = eps;
            }
        }
    }
}
