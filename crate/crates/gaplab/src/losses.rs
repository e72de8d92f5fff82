//! Training objectives: softmax cross-entropy, label-distribution-aware
//! margins with deferred reweighting, and logit-matching distillation.
//!
//! Every loss here comes in a per-sample form (scalar in, scalar out, handy
//! for tests and oracles) and a batch form that also returns the gradient
//! with respect to the logits, which is what the trainers consume. Losses
//! are pure functions; nothing in this module holds state.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::nets::{add_noise, LatentClassifier, SigmaSchedule};
use crate::nn::Rng;
use crate::{Error, Result};

/// Margin/reweighting settings for the long-tail loss.
///
/// Margins follow Δ_j = C / n_j^(1/4) with C chosen so the rarest class gets
/// `max_margin`. From `drw_epoch` onwards, per-sample losses are multiplied
/// by effective-number class weights (β = `beta_eff`), normalized to mean 1
/// across classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdamConfig {
    pub max_margin: f64,
    pub scale: f64,
    pub drw_epoch: usize,
    pub beta_eff: f64,
}

impl Default for LdamConfig {
    fn default() -> Self {
        LdamConfig { max_margin: 0.5, scale: 30.0, drw_epoch: 10, beta_eff: 0.9999 }
    }
}

/// Mixing weight for distillation: α on ground-truth CE, 1−α on squared
/// logit matching against the teacher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { alpha: 0.5 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "distillation alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn check_label(n_classes: usize, label: usize) -> Result<()> {
    if label >= n_classes {
        return Err(Error::Validation(format!(
            "label {label} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

/// log(Σ exp(z_k)) with max-subtraction; NaN inputs propagate untouched.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf, or a NaN/inf slipped in; let the caller's loss go
        // non-finite rather than fabricating a number.
        return m + 1.0_f64.ln() + logits.iter().map(|&z| (z - m).exp()).sum::<f64>();
    }
    m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_label(logits.len(), label)?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// Softmax probabilities with max-subtraction.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over a batch plus d(loss)/d(logits).
pub fn cross_entropy_batch(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n} logit rows",
            labels.len()
        )));
    }
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        check_label(k, label)?;
        let row: Vec<f64> = logits.row(i).to_vec();
        total += log_sum_exp(&row) - row[label];
        let p = softmax(&row);
        for j in 0..k {
            grad[[i, j]] = (p[j] - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Per-class margins Δ_j = max_margin · (min_count / n_j)^(1/4).
///
/// Equivalent to Δ_j = C / n_j^(1/4) with C normalized so the rarest class
/// receives exactly `max_margin`.
pub fn ldam_margins(class_counts: &[usize], max_margin: f64) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::Validation("class_counts is empty".into()));
    }
    if let Some(j) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {j} has zero training samples")));
    }
    let min_n = *class_counts.iter().min().expect("non-empty") as f64;
    Ok(class_counts
        .iter()
        .map(|&n| max_margin * (min_n / n as f64).powf(0.25))
        .collect())
}

/// Effective-number class weights w_j ∝ (1−β)/(1−β^{n_j}), scaled to mean 1.
pub fn drw_weights(class_counts: &[usize], beta_eff: f64) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::Validation("class_counts is empty".into()));
    }
    if let Some(j) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {j} has zero training samples")));
    }
    if !(0.0..1.0).contains(&beta_eff) {
        return Err(Error::Validation(format!(
            "effective-number beta must lie in [0, 1), got {beta_eff}"
        )));
    }
    let raw: Vec<f64> = class_counts
        .iter()
        .map(|&n| {
            if beta_eff == 0.0 {
                1.0
            } else {
                (1.0 - beta_eff) / (1.0 - beta_eff.powi(n as i32))
            }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Margin-adjusted cross-entropy for one sample.
///
/// The true-class logit is reduced by its margin, all logits are scaled by
/// `config.scale`, and plain CE follows. From `config.drw_epoch` on, the
/// sample's loss is multiplied by its class weight.
pub fn ldam_loss(
    logits: &[f64],
    label: usize,
    class_counts: &[usize],
    config: &LdamConfig,
    epoch: usize,
) -> Result<f64> {
    if logits.len() != class_counts.len() {
        return Err(Error::Shape(format!(
            "{} logits but {} class counts",
            logits.len(),
            class_counts.len()
        )));
    }
    check_label(logits.len(), label)?;
    let margins = ldam_margins(class_counts, config.max_margin)?;
    let mut adjusted: Vec<f64> = logits.iter().map(|&z| z * config.scale).collect();
    adjusted[label] -= config.scale * margins[label];
    let ce = log_sum_exp(&adjusted) - adjusted[label];
    if epoch >= config.drw_epoch {
        let weights = drw_weights(class_counts, config.beta_eff)?;
        Ok(weights[label] * ce)
    } else {
        Ok(ce)
    }
}

/// Mean margin-adjusted CE over a batch plus d(loss)/d(logits).
pub fn ldam_loss_batch(
    logits: &Array2<f64>,
    labels: &[usize],
    class_counts: &[usize],
    config: &LdamConfig,
    epoch: usize,
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n} logit rows",
            labels.len()
        )));
    }
    if k != class_counts.len() {
        return Err(Error::Shape(format!("{k} logits but {} class counts", class_counts.len())));
    }
    let margins = ldam_margins(class_counts, config.max_margin)?;
    let weights = if epoch >= config.drw_epoch {
        drw_weights(class_counts, config.beta_eff)?
    } else {
        vec![1.0; k]
    };
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        check_label(k, label)?;
        let mut adjusted: Vec<f64> = logits.row(i).iter().map(|&z| z * config.scale).collect();
        adjusted[label] -= config.scale * margins[label];
        total += weights[label] * (log_sum_exp(&adjusted) - adjusted[label]);
        let p = softmax(&adjusted);
        for j in 0..k {
            let indicator = if j == label { 1.0 } else { 0.0 };
            grad[[i, j]] = weights[label] * config.scale * (p[j] - indicator) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Distillation objective for one sample:
/// α·CE(z_s, label) + (1−α)·Σ_k (z_s[k] − z_t[k])².
pub fn distill_loss(z_s: &[f64], z_t: &[f64], label: usize, config: &DistillConfig) -> Result<f64> {
    if z_s.len() != z_t.len() {
        return Err(Error::Shape(format!(
            "student has {} logits, teacher has {}",
            z_s.len(),
            z_t.len()
        )));
    }
    config.validate()?;
    let ce = cross_entropy(z_s, label)?;
    let l2: f64 = z_s.iter().zip(z_t).map(|(&s, &t)| (s - t) * (s - t)).sum();
    Ok(config.alpha * ce + (1.0 - config.alpha) * l2)
}

/// Mean distillation loss over a batch plus d(loss)/d(student logits).
pub fn distill_loss_batch(
    z_s: &Array2<f64>,
    z_t: &Array2<f64>,
    labels: &[usize],
    config: &DistillConfig,
) -> Result<(f64, Array2<f64>)> {
    if z_s.dim() != z_t.dim() {
        return Err(Error::Shape(format!(
            "student logits {:?} vs teacher logits {:?}",
            z_s.dim(),
            z_t.dim()
        )));
    }
    let (n, k) = z_s.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n} logit rows",
            labels.len()
        )));
    }
    config.validate()?;
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        check_label(k, label)?;
        let row: Vec<f64> = z_s.row(i).to_vec();
        let ce = log_sum_exp(&row) - row[label];
        let p = softmax(&row);
        let mut l2 = 0.0;
        for j in 0..k {
            let d = z_s[[i, j]] - z_t[[i, j]];
            l2 += d * d;
            let indicator = if j == label { 1.0 } else { 0.0 };
            grad[[i, j]] = (config.alpha * (p[j] - indicator)
                + (1.0 - config.alpha) * 2.0 * d)
                / n as f64;
        }
        total += config.alpha * ce + (1.0 - config.alpha) * l2;
    }
    Ok((total / n as f64, grad))
}

/// Single-draw Monte-Carlo estimate of the noise-conditioned objective:
/// sample one sigma per latent from `schedule`, corrupt with that much
/// Gaussian noise, and take the mean CE of the conditioned forward pass.
pub fn noise_conditioned_loss(
    model: &LatentClassifier,
    x: &Array4<f64>,
    labels: &[usize],
    schedule: &SigmaSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    schedule.validate()?;
    let sigmas: Vec<f64> = (0..x.dim().0).map(|_| schedule.sample(rng)).collect();
    let noisy = add_noise(x, &sigmas, rng)?;
    let logits = model.forward(&noisy, Some(&sigmas))?;
    Ok(cross_entropy_batch(&logits, labels)?.0)
}

/// Convenience: one-hot argmax accuracy helper used by trainers to pick
/// predictions off raw logits. Ties break toward the lower class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
