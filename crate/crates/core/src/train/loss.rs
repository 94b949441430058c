//! Cross-entropy, temperature-softened distillation loss and their mix.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::bail;
use crate::Result;

/// Distillation temperature and the weight of the distillation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 8.0,
            lambda: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            bail!(Config, "temperature must be positive, got {}", self.temperature);
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            bail!(Config, "lambda must lie in [0, 1], got {}", self.lambda);
        }
        Ok(())
    }
}

/// Numerically stable `log(softmax(z / t))` of one row.
pub fn log_softmax(z: &[f32], t: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(f64::from(*v) / t));
    let lse = max + libm::log(z.iter().map(|v| libm::exp(f64::from(*v) / t - max)).sum::<f64>());
    z.iter().map(|v| f64::from(*v) / t - lse).collect()
}

fn check(logits: &[f32], n: usize, classes: usize) -> Result<()> {
    if classes == 0 || logits.len() != n * classes {
        bail!(
            Dimension,
            "{} logits for {} samples x {} classes",
            logits.len(),
            n,
            classes
        );
    }
    Ok(())
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f32], labels: &[u16], classes: usize) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    check(logits, n, classes)?;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let y = usize::from(y);
        if y >= classes {
            bail!(Domain, "label {} of sample {} exceeds {} classes", y, i, classes);
        }
        let ls = log_softmax(&logits[i * classes..(i + 1) * classes], 1.0);
        loss -= ls[y];
        for (j, l) in ls.iter().enumerate() {
            grad[i * classes + j] = (libm::exp(*l) - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// `(T^2 / N) * sum_i KL(softmax(teacher_i / T) || softmax(student_i / T))`.
pub fn distributional_loss(teacher: &[f32], student: &[f32], classes: usize, temperature: f64) -> Result<f64> {
    Ok(distributional_loss_grad(teacher, student, classes, temperature)?.0)
}

/// Distillation loss and its gradient with respect to the student logits,
/// `T / N * (q - p)`. The teacher receives no gradient.
pub fn distributional_loss_grad(
    teacher: &[f32],
    student: &[f32],
    classes: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0) {
        bail!(Config, "temperature must be positive");
    }
    if teacher.len() != student.len() || classes == 0 {
        bail!(
            Dimension,
            "teacher has {} logits, student {}",
            teacher.len(),
            student.len()
        );
    }
    let n = teacher.len() / classes;
    check(student, n, classes)?;
    let t = temperature;
    let mut grad = vec![0.0; student.len()];
    let mut total = 0.0;
    for i in 0..n {
        let r = i * classes..(i + 1) * classes;
        let lp = log_softmax(&teacher[r.clone()], t);
        let lq = log_softmax(&student[r], t);
        for j in 0..classes {
            let p = libm::exp(lp[j]);
            total += p * (lp[j] - lq[j]);
            grad[i * classes + j] = t * (libm::exp(lq[j]) - p) / n as f64;
        }
    }
    Ok((t * t * total / n as f64, grad))
}

/// `(1 - lambda) * ce + lambda * distr`.
pub fn total_loss(ce: f64, distr: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ce
    } else if lambda == 1.0 {
        distr
    } else {
        (1.0 - lambda) * ce + lambda * distr
    }
}
