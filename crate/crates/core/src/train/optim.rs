use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::network::{Grads, Network, ParamSlice};
use crate::error::bail;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Variance rectification (RAdam); plain Adam when off.
    pub rectify: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            final_lr: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rectify: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.final_lr >= 0.0
            && self.final_lr <= self.initial_lr
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            bail!(Config, "invalid optimizer settings {:?}", self);
        }
        Ok(())
    }
}

/// Cosine annealing from `initial` at step 0 to `final_` at step `total - 1`.
pub fn cosine_lr(initial: f64, final_: f64, step: u64, total: u64) -> f64 {
    let span = total.saturating_sub(1).max(1) as f64;
    let t = (step as f64).min(span);
    final_ + (initial - final_) * (1.0 + libm::cos(core::f64::consts::PI * t / span)) / 2.0
}

/// RAdam / Adam with a cosine learning-rate schedule over `total_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub total_steps: u64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, sizes: &[usize], total_steps: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            total_steps,
            step: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        })
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(
            self.config.initial_lr,
            self.config.final_lr,
            self.step,
            self.total_steps,
        )
    }

    /// Per-parameter update for `grads`, advancing the step counter.
    pub fn updates(&mut self, grads: &Grads) -> Result<Vec<Vec<f64>>> {
        if grads.buffers.len() != self.m.len() {
            bail!(
                Dimension,
                "{} gradient buffers for {} parameters",
                grads.buffers.len(),
                self.m.len()
            );
        }
        let c = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as f64;
        let b1t = libm::pow(c.beta1, t);
        let b2t = libm::pow(c.beta2, t);
        let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        let rect = if !c.rectify {
            Some(1.0)
        } else if rho_t > 5.0 {
            Some(libm::sqrt(
                (rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t),
            ))
        } else {
            None
        };
        let mut out = Vec::with_capacity(grads.buffers.len());
        for ((g, m), v) in grads.buffers.iter().zip(&mut self.m).zip(&mut self.v) {
            if g.len() != m.len() {
                bail!(
                    Dimension,
                    "gradient of length {} for parameter of length {}",
                    g.len(),
                    m.len()
                );
            }
            let mut upd = vec![0.0; g.len()];
            for i in 0..g.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / (1.0 - b1t);
                upd[i] = match rect {
                    Some(r) => {
                        let vhat = libm::sqrt(v[i] / (1.0 - b2t));
                        -lr * r * mhat / (vhat + c.eps)
                    }
                    None => -lr * mhat,
                };
            }
            out.push(upd);
        }
        Ok(out)
    }

    /// One optimizer step on `net`, followed by its parameter constraints.
    pub fn step(&mut self, net: &mut Network, grads: &Grads) -> Result<()> {
        let upd = self.updates(grads)?;
        for ((_, p), u) in net.params_mut().into_iter().zip(upd) {
            match p {
                ParamSlice::F32(s) => s.iter_mut().zip(u).for_each(|(w, d)| *w += d as f32),
                ParamSlice::F64(s) => s.iter_mut().zip(u).for_each(|(w, d)| *w += d),
            }
        }
        net.enforce_constraints();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let (a, b) = (1e-3, 1e-8);
        assert_eq!(cosine_lr(a, b, 0, 101), a);
        assert!((cosine_lr(a, b, 100, 101) - b).abs() < 1e-18);
        let mid = cosine_lr(a, b, 50, 101);
        assert!((mid - (a + b) / 2.0).abs() < 1e-15);
        assert!((cosine_lr(a, b, 500, 101) - b).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_against_gradient_by_lr() {
        let cfg = OptimizerConfig {
            rectify: false,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, &[3], 10).unwrap();
        let g = Grads {
            buffers: vec![vec![0.5, -2.0, 0.0]],
        };
        let u = opt.updates(&g).unwrap();
        assert!((u[0][0] + 1e-3).abs() < 1e-9);
        assert!((u[0][1] - 1e-3).abs() < 1e-9);
        assert_eq!(u[0][2], 0.0);
    }

    #[test]
    fn radam_warmup_uses_momentum_only() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), &[1], 10).unwrap();
        let g = Grads {
            buffers: vec![vec![4.0]],
        };
        let u = opt.updates(&g).unwrap();
        // rho_1 = 1 <= 5: unadapted step lr * mhat
        assert!((u[0][0] + 1e-3 * 4.0).abs() < 1e-12);
    }
}
