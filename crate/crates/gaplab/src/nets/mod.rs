//! Classifier backbones for the three evaluation spaces.
//!
//! Both classifiers share a small ConvNeXt-flavored trunk: a patchifying
//! stem, stages of (depthwise 7x7 conv, channel LayerNorm, pointwise 4x
//! expansion, GELU, pointwise projection, residual) blocks joined by 2x2
//! strided downsamples, then global average pooling into a linear head.
//! The latent classifier adds a 1x1 stem so it accepts latent stacks at
//! their native resolution, plus per-stage FiLM modulation driven by a
//! noise-level embedding; FiLM affine maps start at exactly zero, so a
//! fresh model ignores sigma entirely.

pub mod noise;

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::blobio;
use crate::error::{Error, Result};
use crate::nn::ops::{
    gelu, gelu_backward, global_avg_pool, global_avg_pool_backward, nchw_to_rows, rows_to_nchw,
};
use crate::nn::{he_std, rng_from_seed, Conv2d, LayerNorm, LayerNormCache, Linear, Module, Param, Rng};
pub use noise::{add_noise, NoiseEmbedding, SigmaSchedule, DEFAULT_EMB_WIDTH};

pub const CLS_FORMAT_VERSION: u32 = 1;

/// Shape of the shared trunk: per-stage channel widths, blocks per stage,
/// and the stem patch size (4 patchifies 64x64 images; 1 keeps latents at
/// native resolution).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvStageSpec {
    pub channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub stem_patch: usize,
}

impl Default for ConvStageSpec {
    fn default() -> Self {
        ConvStageSpec { channels: vec![48, 96, 192], blocks_per_stage: 2, stem_patch: 4 }
    }
}

impl ConvStageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Validation("classifier needs at least one stage".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Validation("stage channel widths must be positive".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Validation("blocks_per_stage must be positive".into()));
        }
        if self.stem_patch == 0 {
            return Err(Error::Validation("stem_patch must be positive".into()));
        }
        Ok(())
    }

    /// Spatial downsampling factor from input to the final feature map.
    pub fn total_stride(&self) -> usize {
        self.stem_patch << (self.channels.len() - 1)
    }
}

/// x' = x * (1 + gamma) + beta with per-sample, per-channel gamma and beta.
pub fn film_modulate(x: &Array4<f64>, gamma: &Array2<f64>, beta: &Array2<f64>) -> Result<Array4<f64>> {
    let (n, c, _, _) = x.dim();
    if gamma.dim() != (n, c) || beta.dim() != (n, c) {
        return Err(Error::Shape(format!(
            "modulation for {:?} features needs ({n}, {c}) gamma/beta, got {:?} and {:?}",
            x.dim(),
            gamma.dim(),
            beta.dim()
        )));
    }
    let mut out = x.clone();
    for i in 0..n {
        for ch in 0..c {
            let g = 1.0 + gamma[[i, ch]];
            let b = beta[[i, ch]];
            for v in out.slice_mut(s![i, ch, .., ..]).iter_mut() {
                *v = *v * g + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of `film_modulate`: returns (dx, dgamma, dbeta).
fn film_modulate_backward(
    x: &Array4<f64>,
    gamma: &Array2<f64>,
    dy: &Array4<f64>,
) -> (Array4<f64>, Array2<f64>, Array2<f64>) {
    let (n, c, _, _) = x.dim();
    let mut dx = dy.clone();
    let mut dgamma = Array2::zeros((n, c));
    let mut dbeta = Array2::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let g = 1.0 + gamma[[i, ch]];
            let xs = x.slice(s![i, ch, .., ..]);
            let dys = dy.slice(s![i, ch, .., ..]);
            dgamma[[i, ch]] = xs.iter().zip(dys.iter()).map(|(&a, &d)| a * d).sum();
            dbeta[[i, ch]] = dys.sum();
            for v in dx.slice_mut(s![i, ch, .., ..]).iter_mut() {
                *v *= g;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// One trunk block: depthwise 7x7, channel LayerNorm, pointwise expand 4x,
/// GELU, pointwise project, residual.
#[derive(Debug)]
struct Block {
    dw: Conv2d,
    norm: LayerNorm,
    pw1: Linear,
    pw2: Linear,
}

#[derive(Debug)]
struct BlockCache {
    x: Array4<f64>,
    norm_cache: LayerNormCache,
    norm_out: Array2<f64>,
    expand_pre: Array2<f64>,
    expand_act: Array2<f64>,
}

impl Block {
    fn new(channels: usize, rng: &mut Rng) -> Self {
        Block {
            dw: Conv2d::new_depthwise(channels, 7, 1, 3, he_std(49), rng),
            norm: LayerNorm::new(channels),
            pw1: Linear::new(channels, 4 * channels, he_std(channels), rng),
            pw2: Linear::new(4 * channels, channels, he_std(4 * channels), rng),
        }
    }

    fn forward_t(&self, x: &Array4<f64>) -> Result<(Array4<f64>, BlockCache)> {
        let (n, c, h, w) = x.dim();
        let y = self.dw.forward(x)?;
        let rows = nchw_to_rows(&y);
        let (norm_out, norm_cache) = self.norm.forward_t(&rows);
        let expand_pre = self.pw1.forward(&norm_out);
        let expand_act = gelu(&expand_pre);
        let proj = self.pw2.forward(&expand_act);
        let out = x + &rows_to_nchw(&proj, n, c, h, w);
        Ok((out, BlockCache { x: x.clone(), norm_cache, norm_out, expand_pre, expand_act }))
    }

    fn backward(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = cache.x.dim();
        let dproj = nchw_to_rows(dy);
        let dact = self.pw2.backward(&cache.expand_act, &dproj);
        let dpre = gelu_backward(&cache.expand_pre, &dact);
        let dnorm = self.pw1.backward(&cache.norm_out, &dpre);
        let drows = self.norm.backward(&cache.norm_cache, &dnorm);
        let ddw_out = rows_to_nchw(&drows, n, c, h, w);
        let dx_branch = self.dw.backward(&cache.x, &ddw_out);
        dy + &dx_branch
    }
}

impl Module for Block {
    fn params(&self) -> Vec<&Param> {
        let mut ps = self.dw.params();
        ps.extend(self.norm.params());
        ps.extend(self.pw1.params());
        ps.extend(self.pw2.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.dw.params_mut();
        ps.extend(self.norm.params_mut());
        ps.extend(self.pw1.params_mut());
        ps.extend(self.pw2.params_mut());
        ps
    }
}

#[derive(Debug)]
struct Trunk {
    spec: ConvStageSpec,
    stem: Conv2d,
    downs: Vec<Conv2d>,
    stages: Vec<Vec<Block>>,
    head: Linear,
}

#[derive(Debug)]
struct StageCache {
    down_in: Option<Array4<f64>>,
    blocks: Vec<BlockCache>,
    film: Option<FilmCache>,
}

#[derive(Debug)]
struct FilmCache {
    x: Array4<f64>,
    gamma: Array2<f64>,
}

#[derive(Debug)]
pub struct TrunkCache {
    stem_in: Array4<f64>,
    stages: Vec<StageCache>,
    feat_hw: (usize, usize),
    pooled: Array2<f64>,
}

impl Trunk {
    fn new(in_channels: usize, num_classes: usize, spec: &ConvStageSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        if in_channels == 0 || num_classes == 0 {
            return Err(Error::Validation(
                "classifier needs positive input channels and class count".into(),
            ));
        }
        let patch = spec.stem_patch;
        let stem = Conv2d::new(
            in_channels,
            spec.channels[0],
            patch,
            patch,
            0,
            he_std(in_channels * patch * patch),
            rng,
        );
        let mut downs = Vec::new();
        let mut stages = Vec::new();
        for (si, &c) in spec.channels.iter().enumerate() {
            if si > 0 {
                let prev = spec.channels[si - 1];
                downs.push(Conv2d::new(prev, c, 2, 2, 0, he_std(prev * 4), rng));
            }
            stages.push((0..spec.blocks_per_stage).map(|_| Block::new(c, rng)).collect());
        }
        let last = *spec.channels.last().expect("validated non-empty");
        let head = Linear::new(last, num_classes, he_std(last), rng);
        Ok(Trunk { spec: spec.clone(), stem, downs, stages, head })
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.stem.in_channels() {
            return Err(Error::Shape(format!(
                "classifier expects {} input channels, got {c}",
                self.stem.in_channels()
            )));
        }
        let stride = self.spec.total_stride();
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the trunk stride {stride}"
            )));
        }
        Ok(())
    }

    /// Runs the trunk; `films` supplies one affine map per stage plus the
    /// conditioning embedding rows, applied after each stage's last block.
    fn forward_t(
        &self,
        x: &Array4<f64>,
        films: Option<(&[Linear], &Array2<f64>)>,
    ) -> Result<(Array2<f64>, TrunkCache)> {
        self.check_input(x)?;
        if let Some((layers, emb)) = films {
            if layers.len() != self.stages.len() {
                return Err(Error::Shape(format!(
                    "{} modulation layers for {} stages",
                    layers.len(),
                    self.stages.len()
                )));
            }
            if emb.nrows() != x.dim().0 {
                return Err(Error::Shape(format!(
                    "{} embedding rows for a batch of {}",
                    emb.nrows(),
                    x.dim().0
                )));
            }
        }
        let stem_in = x.clone();
        let mut h = self.stem.forward(x)?;
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for (si, blocks) in self.stages.iter().enumerate() {
            let down_in = if si > 0 {
                let saved = h.clone();
                h = self.downs[si - 1].forward(&h)?;
                Some(saved)
            } else {
                None
            };
            let mut block_caches = Vec::with_capacity(blocks.len());
            for b in blocks {
                let (next, bc) = b.forward_t(&h)?;
                h = next;
                block_caches.push(bc);
            }
            let film = if let Some((layers, emb)) = films {
                let c = h.dim().1;
                let gb = layers[si].forward(emb);
                let gamma = gb.slice(s![.., ..c]).to_owned();
                let beta = gb.slice(s![.., c..]).to_owned();
                let pre = h.clone();
                h = film_modulate(&h, &gamma, &beta)?;
                Some(FilmCache { x: pre, gamma })
            } else {
                None
            };
            stage_caches.push(StageCache { down_in, blocks: block_caches, film });
        }
        let (_, _, fh, fw) = h.dim();
        let pooled = global_avg_pool(&h);
        let logits = self.head.forward(&pooled);
        Ok((logits, TrunkCache { stem_in, stages: stage_caches, feat_hw: (fh, fw), pooled }))
    }

    /// Backpropagates into every trunk parameter; with `films` it also
    /// updates the per-stage affine maps and returns d(loss)/d(embedding).
    fn backward(
        &mut self,
        cache: &TrunkCache,
        dlogits: &Array2<f64>,
        films: Option<(&mut [Linear], &Array2<f64>)>,
    ) -> Option<Array2<f64>> {
        let dpooled = self.head.backward(&cache.pooled, dlogits);
        let mut grad = global_avg_pool_backward(&dpooled, cache.feat_hw.0, cache.feat_hw.1);
        let mut film_ctx = films;
        let mut demb_total: Option<Array2<f64>> = None;
        for si in (0..self.stages.len()).rev() {
            let sc = &cache.stages[si];
            if let Some(fc) = &sc.film {
                let (layers, emb) = film_ctx.as_mut().expect("film cache implies film layers");
                let (dx, dgamma, dbeta) = film_modulate_backward(&fc.x, &fc.gamma, &grad);
                let c = dgamma.ncols();
                let mut dgb = Array2::zeros((dgamma.nrows(), 2 * c));
                dgb.slice_mut(s![.., ..c]).assign(&dgamma);
                dgb.slice_mut(s![.., c..]).assign(&dbeta);
                let demb = layers[si].backward(emb, &dgb);
                match &mut demb_total {
                    Some(total) => *total += &demb,
                    None => demb_total = Some(demb),
                }
                grad = dx;
            }
            for (bi, b) in self.stages[si].iter_mut().enumerate().rev() {
                grad = b.backward(&sc.blocks[bi], &grad);
            }
            if si > 0 {
                let down_in = sc.down_in.as_ref().expect("stage > 0 caches its downsample input");
                grad = self.downs[si - 1].backward(down_in, &grad);
            }
        }
        let _ = self.stem.backward(&cache.stem_in, &grad);
        demb_total
    }
}

impl Module for Trunk {
    fn params(&self) -> Vec<&Param> {
        let mut ps = self.stem.params();
        for (si, blocks) in self.stages.iter().enumerate() {
            if si > 0 {
                ps.extend(self.downs[si - 1].params());
            }
            for b in blocks {
                ps.extend(b.params());
            }
        }
        ps.extend(self.head.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.stem.params_mut();
        let mut downs = self.downs.iter_mut();
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            if si > 0 {
                ps.extend(downs.next().expect("one downsample per later stage").params_mut());
            }
            for b in blocks {
                ps.extend(b.params_mut());
            }
        }
        ps.extend(self.head.params_mut());
        ps
    }
}

/// Classifier over normalized latent stacks with FiLM noise conditioning.
#[derive(Debug)]
pub struct LatentClassifier {
    trunk: Trunk,
    films: Vec<Linear>,
    noise: NoiseEmbedding,
    config: LatentClsConfig,
}

/// Everything needed to rebuild a latent classifier skeleton.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentClsConfig {
    pub latent_channels: usize,
    pub num_classes: usize,
    pub spec: ConvStageSpec,
    pub emb_width: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct LatentClsCache {
    trunk: TrunkCache,
    noise: Option<(noise::NoiseCache, Array2<f64>)>,
}

impl LatentClassifier {
    pub fn new(config: LatentClsConfig) -> Result<Self> {
        if config.emb_width == 0 {
            return Err(Error::Validation("embedding width must be positive".into()));
        }
        let mut rng = rng_from_seed(config.seed);
        let trunk = Trunk::new(config.latent_channels, config.num_classes, &config.spec, &mut rng)?;
        let films = config
            .spec
            .channels
            .iter()
            .map(|&c| Linear::zeroed(config.emb_width, 2 * c))
            .collect();
        let noise = NoiseEmbedding::new(config.emb_width, &mut rng);
        Ok(LatentClassifier { trunk, films, noise, config })
    }

    pub fn config(&self) -> &LatentClsConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Logits for a batch; `sigmas` switches the FiLM conditioning path on.
    pub fn forward(&self, x: &Array4<f64>, sigmas: Option<&[f64]>) -> Result<Array2<f64>> {
        Ok(self.forward_t(x, sigmas)?.0)
    }

    pub fn forward_t(
        &self,
        x: &Array4<f64>,
        sigmas: Option<&[f64]>,
    ) -> Result<(Array2<f64>, LatentClsCache)> {
        match sigmas {
            None => {
                let (logits, trunk) = self.trunk.forward_t(x, None)?;
                Ok((logits, LatentClsCache { trunk, noise: None }))
            }
            Some(sigmas) => {
                if sigmas.len() != x.dim().0 {
                    return Err(Error::Shape(format!(
                        "{} sigmas for a batch of {}",
                        sigmas.len(),
                        x.dim().0
                    )));
                }
                let (emb, ncache) = self.noise.forward_t(sigmas)?;
                let (logits, trunk) = self.trunk.forward_t(x, Some((&self.films, &emb)))?;
                Ok((logits, LatentClsCache { trunk, noise: Some((ncache, emb)) }))
            }
        }
    }

    /// Accumulates gradients for the batch that produced `cache`.
    pub fn backward(&mut self, cache: &LatentClsCache, dlogits: &Array2<f64>) {
        match &cache.noise {
            None => {
                let demb = self.trunk.backward(&cache.trunk, dlogits, None);
                debug_assert!(demb.is_none());
            }
            Some((ncache, emb)) => {
                let demb = self
                    .trunk
                    .backward(&cache.trunk, dlogits, Some((&mut self.films, emb)))
                    .expect("conditioned forward always reaches the embedding");
                self.noise.backward(ncache, &demb);
            }
        }
    }
}

impl Module for LatentClassifier {
    fn params(&self) -> Vec<&Param> {
        let mut ps = self.trunk.params();
        for f in &self.films {
            ps.extend(f.params());
        }
        ps.extend(self.noise.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.trunk.params_mut();
        for f in &mut self.films {
            ps.extend(f.params_mut());
        }
        ps.extend(self.noise.params_mut());
        ps
    }
}

/// Plain classifier for images and reconstructions: the same trunk without
/// any noise conditioning.
#[derive(Debug)]
pub struct ImageClassifier {
    trunk: Trunk,
    config: ImageClsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageClsConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub spec: ConvStageSpec,
    pub seed: u64,
}

#[derive(Debug)]
pub struct ImageClsCache {
    trunk: TrunkCache,
}

impl ImageClassifier {
    pub fn new(config: ImageClsConfig) -> Result<Self> {
        let mut rng = rng_from_seed(config.seed);
        let trunk = Trunk::new(config.in_channels, config.num_classes, &config.spec, &mut rng)?;
        Ok(ImageClassifier { trunk, config })
    }

    pub fn config(&self) -> &ImageClsConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        Ok(self.trunk.forward_t(x, None)?.0)
    }

    pub fn forward_t(&self, x: &Array4<f64>) -> Result<(Array2<f64>, ImageClsCache)> {
        let (logits, trunk) = self.trunk.forward_t(x, None)?;
        Ok((logits, ImageClsCache { trunk }))
    }

    pub fn backward(&mut self, cache: &ImageClsCache, dlogits: &Array2<f64>) {
        let _ = self.trunk.backward(&cache.trunk, dlogits, None);
    }
}

impl Module for ImageClassifier {
    fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClsManifest {
    format_version: u32,
    kind: String,
    latent: Option<LatentClsConfig>,
    image: Option<ImageClsConfig>,
    param_count: usize,
    params_checksum: String,
}

fn write_classifier_checkpoint(dir: &Path, mut manifest: ClsManifest, flat: &[f32]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let bytes = blobio::f32s_to_le_bytes(flat);
    manifest.params_checksum = blobio::write_blob(&dir.join("params.f32le"), &bytes)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_classifier_checkpoint(dir: &Path, expected_kind: &str) -> Result<(ClsManifest, Vec<f32>)> {
    let manifest: ClsManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != CLS_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: CLS_FORMAT_VERSION,
        });
    }
    if manifest.kind != expected_kind {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint holds a {} classifier, expected {expected_kind}",
            manifest.kind
        )));
    }
    let bytes = blobio::read_blob_checked(
        &dir.join("params.f32le"),
        &manifest.params_checksum,
        "classifier params",
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
    Ok((manifest, flat))
}

pub fn save_latent_classifier(model: &LatentClassifier, dir: &Path) -> Result<()> {
    let flat = crate::nn::flatten_params_f32(model);
    let manifest = ClsManifest {
        format_version: CLS_FORMAT_VERSION,
        kind: "latent".into(),
        latent: Some(model.config.clone()),
        image: None,
        param_count: flat.len(),
        params_checksum: String::new(),
    };
    write_classifier_checkpoint(dir, manifest, &flat)
}

pub fn load_latent_classifier(dir: &Path) -> Result<LatentClassifier> {
    let (manifest, flat) = read_classifier_checkpoint(dir, "latent")?;
    let config = manifest
        .latent
        .ok_or_else(|| Error::CorruptCheckpoint("latent checkpoint lacks its config".into()))?;
    let mut model = LatentClassifier::new(config)?;
    crate::nn::load_params_f32(&mut model, &flat)?;
    Ok(model)
}

pub fn save_image_classifier(model: &ImageClassifier, dir: &Path) -> Result<()> {
    let flat = crate::nn::flatten_params_f32(model);
    let manifest = ClsManifest {
        format_version: CLS_FORMAT_VERSION,
        kind: "image".into(),
        latent: None,
        image: Some(model.config.clone()),
        param_count: flat.len(),
        params_checksum: String::new(),
    };
    write_classifier_checkpoint(dir, manifest, &flat)
}

pub fn load_image_classifier(dir: &Path) -> Result<ImageClassifier> {
    let (manifest, flat) = read_classifier_checkpoint(dir, "image")?;
    let config = manifest
        .image
        .ok_or_else(|| Error::CorruptCheckpoint("image checkpoint lacks its config".into()))?;
    let mut model = ImageClassifier::new(config)?;
    crate::nn::load_params_f32(&mut model, &flat)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use crate::losses::cross_entropy_batch;
    use crate::nn::{rng_from_seed, AdamW};
    use rand::Rng as _;
    use tempfile::tempdir;

    fn tiny_spec() -> ConvStageSpec {
        ConvStageSpec { channels: vec![5, 7], blocks_per_stage: 1, stem_patch: 1 }
    }

    fn tiny_latent_config(seed: u64) -> LatentClsConfig {
        LatentClsConfig {
            latent_channels: 3,
            num_classes: 2,
            spec: tiny_spec(),
            emb_width: 9,
            seed,
        }
    }

    fn random_latents(n: usize, seed: u64) -> Array4<f64> {
        let mut rng = rng_from_seed(seed);
        Array4::from_shape_fn((n, 3, 8, 8), |_| rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn film_worked_example() {
        // Two channels of a single sample: [[1,2]] and [[3,4]].
        let x = Array4::from_shape_vec((1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gamma = Array2::from_shape_vec((1, 2), vec![1.0, -1.0]).unwrap();
        let beta = Array2::from_shape_vec((1, 2), vec![0.5, 0.0]).unwrap();
        let y = film_modulate(&x, &gamma, &beta).unwrap();
        assert_eq!(y.as_slice().unwrap(), &[2.5, 4.5, 0.0, 0.0]);
    }

    #[test]
    fn film_zero_is_identity_and_gamma_one_doubles() {
        let x = random_latents(2, 0);
        let zeros = Array2::zeros((2, 3));
        let y = film_modulate(&x, &zeros, &zeros).unwrap();
        assert_eq!(x, y);
        let ones = Array2::ones((2, 3));
        let doubled = film_modulate(&x, &ones, &zeros).unwrap();
        assert_eq!(doubled, &x * 2.0);
    }

    #[test]
    fn film_rejects_channel_mismatch() {
        let x = Array4::<f64>::zeros((1, 3, 2, 2));
        let bad = Array2::zeros((1, 2));
        assert!(matches!(
            film_modulate(&x, &bad, &bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fresh_film_makes_logits_independent_of_sigma() {
        let model = LatentClassifier::new(tiny_latent_config(7)).unwrap();
        let x = random_latents(4, 1);
        let a = model.forward(&x, Some(&[0.1, 0.1, 0.1, 0.1])).unwrap();
        let b = model.forward(&x, Some(&[10.0, 0.5, 3.0, 0.02])).unwrap();
        assert_eq!(a, b, "zero-initialized modulation must ignore sigma");
        let plain = model.forward(&x, None).unwrap();
        assert_eq!(a, plain, "zero modulation must equal the sigma-free path");
    }

    #[test]
    fn logits_have_class_count_columns_and_stay_finite() {
        let spec = ConvStageSpec { channels: vec![6, 8], blocks_per_stage: 1, stem_patch: 4 };
        let model = ImageClassifier::new(ImageClsConfig {
            in_channels: 1,
            num_classes: 5,
            spec,
            seed: 3,
        })
        .unwrap();
        for fill in [0.0, 1.0] {
            let x = Array4::from_elem((2, 1, 16, 16), fill);
            let logits = model.forward(&x).unwrap();
            assert_eq!(logits.dim(), (2, 5));
            assert!(logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn permuting_the_batch_permutes_logits_identically() {
        let model = LatentClassifier::new(tiny_latent_config(11)).unwrap();
        let x = random_latents(3, 2);
        let sigmas = [0.3, 1.0, 2.5];
        let base = model.forward(&x, Some(&sigmas)).unwrap();
        let perm = [2usize, 0, 1];
        let xp = {
            let mut xp = Array4::zeros(x.raw_dim());
            for (dst, &src) in perm.iter().enumerate() {
                xp.index_axis_mut(Axis(0), dst).assign(&x.index_axis(Axis(0), src));
            }
            xp
        };
        let sp: Vec<f64> = perm.iter().map(|&i| sigmas[i]).collect();
        let permuted = model.forward(&xp, Some(&sp)).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                permuted.row(dst),
                base.row(src),
                "row {dst} should be the original row {src}"
            );
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let model = LatentClassifier::new(tiny_latent_config(5)).unwrap();
        // Wrong channel count.
        let bad_c = Array4::<f64>::zeros((1, 2, 8, 8));
        assert!(matches!(model.forward(&bad_c, None), Err(Error::Shape(_))));
        // Not divisible by the trunk stride (stem 1, one downsample => 2).
        let bad_hw = Array4::<f64>::zeros((1, 3, 7, 7));
        assert!(matches!(model.forward(&bad_hw, None), Err(Error::Shape(_))));
        // Negative sigma.
        let x = Array4::<f64>::zeros((1, 3, 8, 8));
        assert!(matches!(
            model.forward(&x, Some(&[-0.5])),
            Err(Error::Validation(_))
        ));
        // Sigma count mismatch.
        assert!(matches!(
            model.forward(&x, Some(&[0.5, 0.5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn spec_validation_catches_degenerate_shapes() {
        assert!(ConvStageSpec { channels: vec![], blocks_per_stage: 1, stem_patch: 1 }
            .validate()
            .is_err());
        assert!(ConvStageSpec { channels: vec![4], blocks_per_stage: 0, stem_patch: 1 }
            .validate()
            .is_err());
        assert!(ConvStageSpec { channels: vec![4], blocks_per_stage: 1, stem_patch: 0 }
            .validate()
            .is_err());
        assert!(ConvStageSpec { channels: vec![4, 0], blocks_per_stage: 1, stem_patch: 1 }
            .validate()
            .is_err());
    }

    /// Central-difference check of d(loss)/d(theta) across every parameter
    /// tensor of the conditioned model, film weights randomized away from
    /// zero so the noise-embedding path carries gradient.
    #[test]
    fn conditioned_gradients_match_finite_differences() {
        let mut model = LatentClassifier::new(tiny_latent_config(13)).unwrap();
        let mut rng = rng_from_seed(77);
        // Nudge every all-zero tensor (film affines, biases, LN shifts) off
        // zero so no gradient path is vacuously zero at the test point.
        for p in model.params_mut() {
            if p.value.iter().all(|&v| v == 0.0) {
                for v in p.value.iter_mut() {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
        let x = random_latents(2, 3);
        let sigmas = [0.4, 2.0];
        let labels = [0usize, 1];

        let loss_of = |m: &LatentClassifier| -> f64 {
            let logits = m.forward(&x, Some(&sigmas)).unwrap();
            cross_entropy_batch(&logits, &labels).unwrap().0
        };

        model.zero_grad();
        let (logits, cache) = model.forward_t(&x, Some(&sigmas)).unwrap();
        let (_, dlogits) = cross_entropy_batch(&logits, &labels).unwrap();
        model.backward(&cache, &dlogits);

        let grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| p.grad.iter().copied().collect())
            .collect();
        let eps = 1e-3;
        let n_tensors = grads.len();
        for ti in 0..n_tensors {
            let numel = grads[ti].len();
            for &idx in &[0, numel / 2, numel - 1] {
                let orig = model.params()[ti].value.as_slice().unwrap()[idx];
                {
                    let mut ps = model.params_mut();
                    ps[ti].value.as_slice_mut().unwrap()[idx] = orig + eps;
                }
                let fp = loss_of(&model);
                {
                    let mut ps = model.params_mut();
                    ps[ti].value.as_slice_mut().unwrap()[idx] = orig - eps;
                }
                let fm = loss_of(&model);
                {
                    let mut ps = model.params_mut();
                    ps[ti].value.as_slice_mut().unwrap()[idx] = orig;
                }
                let fd = (fp - fm) / (2.0 * eps);
                let an = grads[ti][idx];
                assert!(
                    (fd - an).abs() <= 1e-2 * an.abs().max(1e-4),
                    "tensor {ti} entry {idx}: fd={fd:e} analytic={an:e}"
                );
            }
        }
    }

    #[test]
    fn training_with_conditioning_learns_sigma_dependence() {
        let mut model = LatentClassifier::new(tiny_latent_config(17)).unwrap();
        let schedule = SigmaSchedule::default();
        let mut rng = rng_from_seed(21);
        let x = random_latents(16, 4);
        let labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let mut opt = AdamW::new(1e-3, 0.0);
        for _ in 0..30 {
            let sigmas: Vec<f64> = (0..16).map(|_| schedule.sample(&mut rng)).collect();
            let noisy = add_noise(&x, &sigmas, &mut rng).unwrap();
            model.zero_grad();
            let (logits, cache) = model.forward_t(&noisy, Some(&sigmas)).unwrap();
            let (_, dlogits) = cross_entropy_batch(&logits, &labels).unwrap();
            model.backward(&cache, &dlogits);
            let mut ps = model.params_mut();
            opt.step(&mut ps);
        }
        let probe = random_latents(4, 5);
        let grid = [0.02, 0.5, 5.0];
        let mut max_diff = 0.0f64;
        let base = model.forward(&probe, Some(&vec![grid[0]; 4])).unwrap();
        for &s in &grid[1..] {
            let other = model.forward(&probe, Some(&vec![s; 4])).unwrap();
            for (a, b) in base.iter().zip(other.iter()) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
        assert!(
            max_diff > 0.0,
            "training never produced sigma-dependent modulation"
        );
    }

    #[test]
    fn latent_checkpoint_roundtrips_through_disk() {
        let dir = tempdir().unwrap();
        let model = LatentClassifier::new(tiny_latent_config(23)).unwrap();
        save_latent_classifier(&model, dir.path()).unwrap();
        let loaded = load_latent_classifier(dir.path()).unwrap();
        let x = random_latents(2, 6);
        let a = model.forward(&x, Some(&[0.1, 1.0])).unwrap();
        let b = loaded.forward(&x, Some(&[0.1, 1.0])).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-4, "f32 roundtrip drifted: {u} vs {v}");
        }
    }

    #[test]
    fn image_checkpoint_roundtrips_and_kinds_do_not_mix() {
        let dir = tempdir().unwrap();
        let spec = ConvStageSpec { channels: vec![4], blocks_per_stage: 1, stem_patch: 2 };
        let model = ImageClassifier::new(ImageClsConfig {
            in_channels: 1,
            num_classes: 3,
            spec,
            seed: 29,
        })
        .unwrap();
        save_image_classifier(&model, dir.path()).unwrap();
        let loaded = load_image_classifier(dir.path()).unwrap();
        let x = Array4::from_elem((1, 1, 8, 8), 0.5);
        let a = model.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-4));
        assert!(matches!(
            load_latent_classifier(dir.path()),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn corrupted_classifier_params_are_rejected() {
        let dir = tempdir().unwrap();
        let model = LatentClassifier::new(tiny_latent_config(31)).unwrap();
        save_latent_classifier(&model, dir.path()).unwrap();
        let blob = dir.path().join("params.f32le");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[8] ^= 0xff;
        std::fs::write(&blob, bytes).unwrap();
        assert!(matches!(
            load_latent_classifier(dir.path()),
            Err(Error::CorruptCheckpoint(_))
        ));
    }
}
