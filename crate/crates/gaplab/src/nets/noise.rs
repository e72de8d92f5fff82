//! Noise machinery for the conditioned latent classifier: the σ sampling
//! schedule, Gaussian corruption of latents, and the Fourier/MLP embedding
//! that turns a noise level into a conditioning vector.

use ndarray::{Array2, Array4};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::ops::{silu, silu_backward};
use crate::nn::{Linear, Module, Param, Rng};
use crate::{Error, Result};

/// Log-uniform noise-level distribution on [sigma_min, sigma_max].
///
/// The degenerate case sigma_min == sigma_max (including 0) is allowed and
/// yields that constant; otherwise both bounds must be positive so the
/// log-space draw is defined.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SigmaSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        // Chosen for unit-variance normalized latents: spans near-clean
        // through almost pure noise.
        SigmaSchedule { sigma_min: 0.02, sigma_max: 5.0 }
    }
}

impl SigmaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma_min.is_finite() || !self.sigma_max.is_finite() {
            return Err(Error::Validation("sigma bounds must be finite".into()));
        }
        if self.sigma_min < 0.0 || self.sigma_min > self.sigma_max {
            return Err(Error::Validation(format!(
                "need 0 <= sigma_min <= sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.sigma_min == 0.0 && self.sigma_max > 0.0 {
            return Err(Error::Validation(
                "log-uniform sampling needs sigma_min > 0 (or a degenerate schedule)".into(),
            ));
        }
        Ok(())
    }

    /// Draws sigma log-uniformly; a degenerate schedule returns its constant.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.sigma_min == self.sigma_max {
            return self.sigma_min;
        }
        let lo = self.sigma_min.ln();
        let hi = self.sigma_max.ln();
        (lo + rng.gen::<f64>() * (hi - lo)).exp()
    }
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    for &s in sigmas {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Validation(format!(
                "noise level must be finite and non-negative, got {s}"
            )));
        }
    }
    Ok(())
}

/// x + sigma·ε with ε i.i.d. standard normal; one sigma per sample.
///
/// ε is drawn for every element regardless of sigma so the RNG stream does
/// not depend on the sigma values.
pub fn add_noise(x: &Array4<f64>, sigmas: &[f64], rng: &mut Rng) -> Result<Array4<f64>> {
    let n = x.shape()[0];
    if sigmas.len() != n {
        return Err(Error::Shape(format!(
            "{} sigmas for a batch of {n} samples",
            sigmas.len()
        )));
    }
    check_sigmas(sigmas)?;
    let mut out = x.clone();
    for (i, mut sample) in out.outer_iter_mut().enumerate() {
        let sigma = sigmas[i];
        for v in sample.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += sigma * eps;
        }
    }
    Ok(out)
}

pub const NOISE_FREQ_COUNT: usize = 16;
pub const NOISE_FREQ_MIN: f64 = 0.25;
pub const NOISE_FREQ_MAX: f64 = 16.0;
pub const DEFAULT_EMB_WIDTH: usize = 128;
/// Shift that keeps log(sigma) defined at sigma = 0.
pub const SIGMA_LOG_SHIFT: f64 = 1e-8;

/// Fixed log-spaced frequency bank applied to t = ln(sigma + shift).
fn frequency_bank() -> Vec<f64> {
    (0..NOISE_FREQ_COUNT)
        .map(|i| {
            let frac = i as f64 / (NOISE_FREQ_COUNT - 1) as f64;
            NOISE_FREQ_MIN * (NOISE_FREQ_MAX / NOISE_FREQ_MIN).powf(frac)
        })
        .collect()
}

/// Raw Fourier features for a slice of sigmas: row i is
/// [sin(f_0 t_i), .., sin(f_{F-1} t_i), cos(f_0 t_i), .., cos(f_{F-1} t_i)].
pub fn sigma_fourier_features(sigmas: &[f64]) -> Result<Array2<f64>> {
    check_sigmas(sigmas)?;
    let freqs = frequency_bank();
    let mut out = Array2::zeros((sigmas.len(), 2 * NOISE_FREQ_COUNT));
    for (i, &sigma) in sigmas.iter().enumerate() {
        let t = (sigma + SIGMA_LOG_SHIFT).ln();
        for (j, &f) in freqs.iter().enumerate() {
            out[[i, j]] = (f * t).sin();
            out[[i, NOISE_FREQ_COUNT + j]] = (f * t).cos();
        }
    }
    Ok(out)
}

/// Two affine layers with a SiLU between, mapping Fourier features of sigma
/// to a conditioning embedding e(sigma).
#[derive(Debug)]
pub struct NoiseEmbedding {
    lin1: Linear,
    lin2: Linear,
}

#[derive(Debug)]
pub struct NoiseCache {
    features: Array2<f64>,
    h_pre: Array2<f64>,
    h_act: Array2<f64>,
}

impl NoiseEmbedding {
    pub fn new(width: usize, rng: &mut Rng) -> Self {
        let in_features = 2 * NOISE_FREQ_COUNT;
        NoiseEmbedding {
            lin1: Linear::new(in_features, width, crate::nn::he_std(in_features), rng),
            lin2: Linear::new(width, width, crate::nn::he_std(width), rng),
        }
    }

    pub fn width(&self) -> usize {
        self.lin2.out_features()
    }

    pub fn forward(&self, sigmas: &[f64]) -> Result<Array2<f64>> {
        Ok(self.forward_t(sigmas)?.0)
    }

    pub fn forward_t(&self, sigmas: &[f64]) -> Result<(Array2<f64>, NoiseCache)> {
        let features = sigma_fourier_features(sigmas)?;
        let h_pre = self.lin1.forward(&features);
        let h_act = silu(&h_pre);
        let emb = self.lin2.forward(&h_act);
        Ok((emb, NoiseCache { features, h_pre, h_act }))
    }

    /// Backpropagates d(loss)/d(embedding); gradients stop at the fixed
    /// frequency bank.
    pub fn backward(&mut self, cache: &NoiseCache, demb: &Array2<f64>) {
        let dh_act = self.lin2.backward(&cache.h_act, demb);
        let dh_pre = silu_backward(&cache.h_pre, &dh_act);
        let _ = self.lin1.backward(&cache.features, &dh_pre);
    }
}

impl Module for NoiseEmbedding {
    fn params(&self) -> Vec<&Param> {
        let mut ps = self.lin1.params();
        ps.extend(self.lin2.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.lin1.params_mut();
        ps.extend(self.lin2.params_mut());
        ps
    }
}
