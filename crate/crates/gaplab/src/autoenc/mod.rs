//! Convolutional autoencoder, latent normalization and fidelity reporting.
//!
//! The encoder halves the spatial resolution once per stage with strided
//! 3x3 convolutions and projects to a narrow latent stack; the decoder
//! mirrors it with nearest-neighbor upsampling followed by 3x3 convolutions
//! and a sigmoid output, so reconstructions always land in [0, 1]. With the
//! default three stages a (c, H, W) image maps to a (latent_channels, H/8,
//! W/8) latent.

pub mod scramble;

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::blobio;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::metrics;
use crate::nn::ops::{relu, relu_backward, sigmoid, sigmoid_backward, upsample_nearest2, upsample_nearest2_backward};
use crate::nn::{he_std, rng_from_seed, AdamW, Conv2d, Module, Param, Rng};

pub const AE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AeConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub latent_channels: usize,
    /// Channel widths of the downsampling stages, outermost first.
    pub stage_widths: Vec<usize>,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { in_channels: 1, image_size: 64, latent_channels: 4, stage_widths: vec![32, 64, 128] }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() {
            return Err(Error::Validation("autoencoder needs at least one stage".into()));
        }
        if self.in_channels == 0 || self.latent_channels == 0 {
            return Err(Error::Validation("channel counts must be positive".into()));
        }
        let factor = self.downsample_factor();
        if self.image_size == 0 || self.image_size % factor != 0 {
            return Err(Error::Validation(format!(
                "image_size {} is not divisible by the {}x downsample factor",
                self.image_size, factor
            )));
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.stage_widths.len()
    }

    /// Latent shape (channels, h, w).
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let hw = self.image_size / self.downsample_factor();
        (self.latent_channels, hw, hw)
    }
}

pub struct Autoencoder {
    pub config: AeConfig,
    pub seed: u64,
    /// Optimizer steps applied so far, recorded in checkpoints.
    pub step: u64,
    enc: Vec<Conv2d>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec: Vec<Conv2d>,
}

pub struct AeCache {
    enc_inputs: Vec<Array4<f64>>,
    enc_pre: Vec<Array4<f64>>,
    enc_out_input: Array4<f64>,
    latent: Array4<f64>,
    dec_in_pre: Array4<f64>,
    dec_inputs: Vec<Array4<f64>>,
    dec_pre: Vec<Array4<f64>>,
    recon: Array4<f64>,
}

impl Autoencoder {
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng: Rng = rng_from_seed(derive_seed(seed, &["ae-init"]));
        let mut enc = Vec::new();
        let mut c_in = config.in_channels;
        for &w in &config.stage_widths {
            enc.push(Conv2d::new(c_in, w, 3, 2, 1, he_std(c_in * 9), &mut rng));
            c_in = w;
        }
        let deepest = *config.stage_widths.last().unwrap();
        let enc_out = Conv2d::new(deepest, config.latent_channels, 3, 1, 1, he_std(deepest * 9), &mut rng);
        let dec_in = Conv2d::new(
            config.latent_channels,
            deepest,
            3,
            1,
            1,
            he_std(config.latent_channels * 9),
            &mut rng,
        );
        let mut dec = Vec::new();
        for i in (0..config.stage_widths.len()).rev() {
            let from = config.stage_widths[i];
            let to = if i == 0 { config.in_channels } else { config.stage_widths[i - 1] };
            dec.push(Conv2d::new(from, to, 3, 1, 1, he_std(from * 9), &mut rng));
        }
        Ok(Autoencoder { config, seed, step: 0, enc, enc_out, dec_in, dec })
    }

    fn check_image(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let s = self.config.image_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::Shape(format!(
                "autoencoder expects ({}, {s}, {s}) images, got ({c}, {h}, {w})",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = z.dim();
        let (lc, lh, lw) = self.config.latent_shape();
        if c != lc || h != lh || w != lw {
            return Err(Error::Shape(format!(
                "autoencoder expects ({lc}, {lh}, {lw}) latents, got ({c}, {h}, {w})"
            )));
        }
        Ok(())
    }

    /// Images (n, c, H, W) to latents (n, latent_channels, H/f, W/f).
    pub fn encode(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_image(x)?;
        let mut h = x.clone();
        for conv in &self.enc {
            h = relu(&conv.forward(&h)?);
        }
        self.enc_out.forward(&h)
    }

    /// Latents back to images; the sigmoid output keeps pixels in [0, 1].
    pub fn decode(&self, z: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_latent(z)?;
        let mut h = relu(&self.dec_in.forward(z)?);
        for (i, conv) in self.dec.iter().enumerate() {
            h = upsample_nearest2(&h);
            let y = conv.forward(&h)?;
            h = if i + 1 == self.dec.len() { sigmoid(&y) } else { relu(&y) };
        }
        Ok(h)
    }

    pub fn reconstruct(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.decode(&self.encode(x)?)
    }

    fn forward_train(&self, x: &Array4<f64>) -> Result<AeCache> {
        self.check_image(x)?;
        let mut enc_inputs = Vec::new();
        let mut enc_pre = Vec::new();
        let mut h = x.clone();
        for conv in &self.enc {
            enc_inputs.push(h.clone());
            let y = conv.forward(&h)?;
            enc_pre.push(y.clone());
            h = relu(&y);
        }
        let enc_out_input = h.clone();
        let latent = self.enc_out.forward(&h)?;

        let dec_in_pre = self.dec_in.forward(&latent)?;
        let mut dec_inputs = Vec::new();
        let mut dec_pre = Vec::new();
        let mut d = relu(&dec_in_pre);
        let mut recon = Array4::zeros(x.raw_dim());
        for (i, conv) in self.dec.iter().enumerate() {
            let up = upsample_nearest2(&d);
            dec_inputs.push(up.clone());
            let y = conv.forward(&up)?;
            dec_pre.push(y.clone());
            if i + 1 == self.dec.len() {
                recon = sigmoid(&y);
            } else {
                d = relu(&y);
            }
        }
        Ok(AeCache { enc_inputs, enc_pre, enc_out_input, latent, dec_in_pre, dec_inputs, dec_pre, recon })
    }

    /// Backpropagates mean-squared reconstruction error; returns the loss.
    fn backward_mse(&mut self, x: &Array4<f64>, cache: &AeCache) -> f64 {
        let numel = x.len() as f64;
        let diff = &cache.recon - x;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / numel;
        let drecon = diff.mapv(|v| 2.0 * v / numel);

        // Decoder, last stage first.
        let last = self.dec.len() - 1;
        let mut grad = sigmoid_backward(&cache.recon, &drecon);
        for i in (0..self.dec.len()).rev() {
            if i != last {
                grad = relu_backward(&cache.dec_pre[i], &grad);
            }
            let dup = self.dec[i].backward(&cache.dec_inputs[i], &grad);
            grad = upsample_nearest2_backward(&dup);
        }
        grad = relu_backward(&cache.dec_in_pre, &grad);
        let dlatent = self.dec_in.backward(&cache.latent, &grad);

        // Encoder.
        let mut g = self.enc_out.backward(&cache.enc_out_input, &dlatent);
        for i in (0..self.enc.len()).rev() {
            g = relu_backward(&cache.enc_pre[i], &g);
            g = self.enc[i].backward(&cache.enc_inputs[i], &g);
        }
        loss
    }
}

impl Module for Autoencoder {
    fn params(&self) -> Vec<&Param> {
        let mut ps = Vec::new();
        for c in &self.enc {
            ps.extend(c.params());
        }
        ps.extend(self.enc_out.params());
        ps.extend(self.dec_in.params());
        for c in &self.dec {
            ps.extend(c.params());
        }
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for c in &mut self.enc {
            ps.extend(c.params_mut());
        }
        ps.extend(self.enc_out.params_mut());
        ps.extend(self.dec_in.params_mut());
        for c in &mut self.dec {
            ps.extend(c.params_mut());
        }
        ps
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeTrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeTrainOptions {
    fn default() -> Self {
        AeTrainOptions { epochs: 30, learning_rate: 1e-3, batch_size: 16, seed: 7 }
    }
}

/// Trains a fresh autoencoder on `images` and returns it with the per-epoch
/// mean loss history. Zero epochs returns the deterministic initialization.
pub fn train_autoencoder(
    images: &Array4<f64>,
    config: &AeConfig,
    opts: &AeTrainOptions,
) -> Result<(Autoencoder, Vec<f64>)> {
    if images.dim().0 == 0 {
        return Err(Error::Validation("cannot train an autoencoder on zero images".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Validation("batch_size must be positive".into()));
    }
    let mut ae = Autoencoder::new(config.clone(), opts.seed)?;
    let mut opt = AdamW::new(opts.learning_rate, 0.0);
    let n = images.dim().0;
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng: Rng =
            rng_from_seed(derive_seed(opts.seed, &["ae-epoch", &epoch.to_string()]));
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch = gather(images, chunk);
            let cache = ae.forward_train(&batch)?;
            ae.zero_grad();
            let loss = ae.backward_mse(&batch, &cache);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "autoencoder loss became non-finite at epoch {epoch}"
                )));
            }
            let mut params = ae.params_mut();
            opt.step(&mut params);
            ae.step += 1;
            epoch_loss += loss;
            batches += 1.0;
        }
        history.push(epoch_loss / batches);
    }
    Ok((ae, history))
}

pub(crate) fn shuffle(order: &mut [usize], rng: &mut Rng) {
    use rand::Rng as _;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Gathers rows of a (n, c, h, w) stack into a new batch.
pub(crate) fn gather(x: &Array4<f64>, idx: &[usize]) -> Array4<f64> {
    let (_, c, h, w) = x.dim();
    let mut out = Array4::zeros((idx.len(), c, h, w));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&x.index_axis(ndarray::Axis(0), i));
    }
    out
}

/// Per-channel latent mean and standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits per-channel statistics over all samples and spatial positions.
/// Channels with near-zero variance get their std floored at 1e-6 with a
/// warning instead of dividing by zero.
pub fn fit_latent_stats(latents: &Array4<f64>) -> Result<LatentStats> {
    let (n, c, h, w) = latents.dim();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 latents to fit statistics, got {n}"
        )));
    }
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ci in 0..c {
        let ch = latents.index_axis(ndarray::Axis(1), ci);
        let m = ch.iter().sum::<f64>() / count;
        let var = ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
        let mut s = var.sqrt();
        if s < 1e-6 {
            log::warn!("latent channel {ci} has near-zero variance ({var:.3e}); flooring std");
            s = 1e-6;
        }
        mean[ci] = m;
        std[ci] = s;
    }
    Ok(LatentStats { mean, std })
}

impl LatentStats {
    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.mean.len() {
            return Err(Error::Shape(format!(
                "stats cover {} channels, latent has {c}",
                self.mean.len()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, z: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_channels(z.dim().1)?;
        let mut out = z.clone();
        for (ci, (&m, &s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.index_axis_mut(ndarray::Axis(1), ci).mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn denormalize(&self, z: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_channels(z.dim().1)?;
        let mut out = z.clone();
        for (ci, (&m, &s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.index_axis_mut(ndarray::Axis(1), ci).mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }
}

/// Per-image reconstruction fidelity of an autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// PSNR/SSIM of `decode(encode(x))` against `x` over an image stack.
pub fn reconstruction_quality(ae: &Autoencoder, images: &Array4<f64>) -> Result<FidelityReport> {
    if images.dim().0 == 0 {
        return Err(Error::Validation("fidelity over an empty image set".into()));
    }
    let mut recon = Array4::zeros(images.raw_dim());
    for start in (0..images.dim().0).step_by(32) {
        let end = (start + 32).min(images.dim().0);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather(images, &idx);
        let r = ae.reconstruct(&batch)?;
        recon.slice_mut(ndarray::s![start..end, .., .., ..]).assign(&r);
    }
    fidelity_from_pairs(&recon, images)
}

/// Fidelity metrics for two aligned image stacks (`test` vs `reference`).
pub fn fidelity_from_pairs(test: &Array4<f64>, reference: &Array4<f64>) -> Result<FidelityReport> {
    if test.dim() != reference.dim() {
        return Err(Error::Shape("fidelity stacks must have identical shapes".into()));
    }
    if test.dim().0 == 0 {
        return Err(Error::Validation("fidelity over an empty image set".into()));
    }
    let n = test.dim().0;
    let mut psnr = Vec::with_capacity(n);
    let mut ssim = Vec::with_capacity(n);
    for i in 0..n {
        let t: Array3<f64> = test.index_axis(ndarray::Axis(0), i).to_owned();
        let r: Array3<f64> = reference.index_axis(ndarray::Axis(0), i).to_owned();
        psnr.push(metrics::psnr(&t, &r, 1.0)?);
        ssim.push(metrics::ssim(&t, &r, 1.0)?);
    }
    let (psnr_mean, psnr_std) = mean_std(&psnr);
    let (ssim_mean, ssim_std) = mean_std(&ssim);
    Ok(FidelityReport { psnr, ssim, psnr_mean, psnr_std, ssim_mean, ssim_std })
}

/// Sample mean and standard deviation (n-1 denominator, 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Serialize, Deserialize)]
struct AeManifest {
    format_version: u32,
    config: AeConfig,
    seed: u64,
    step: u64,
    param_count: usize,
    params_checksum: String,
}

/// Saves config plus flattened parameters into `dir`.
pub fn save_autoencoder(ae: &Autoencoder, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let flat = crate::nn::flatten_params_f32(ae);
    let bytes = blobio::f32s_to_le_bytes(&flat);
    let params_checksum = blobio::write_blob(&dir.join("params.f32le"), &bytes)?;
    let manifest = AeManifest {
        format_version: AE_FORMAT_VERSION,
        config: ae.config.clone(),
        seed: ae.seed,
        step: ae.step,
        param_count: flat.len(),
        params_checksum,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Rebuilds an autoencoder from a checkpoint directory.
pub fn load_autoencoder(dir: &Path) -> Result<Autoencoder> {
    let manifest: AeManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != AE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: AE_FORMAT_VERSION,
        });
    }
    let bytes = blobio::read_blob_checked(
        &dir.join("params.f32le"),
        &manifest.params_checksum,
        "autoencoder params",
    )
    .map_err(|e| match e {
        Error::CorruptCorpus(m) => Error::CorruptCheckpoint(m),
        other => other,
    })?;
    let flat = blobio::f32s_from_le_bytes(&bytes)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if flat.len() != manifest.param_count {
        return Err(Error::CorruptCheckpoint(format!(
            "manifest declares {} parameters, blob holds {}",
            manifest.param_count,
            flat.len()
        )));
    }
    let mut ae = Autoencoder::new(manifest.config, manifest.seed)?;
    ae.step = manifest.step;
    crate::nn::load_params_f32(&mut ae, &flat)?;
    Ok(ae)
}
