//! Synthetic long-tailed corpus of texture-coded images.
//!
//! Every class owns one canonical band-limited texture: a fixed pattern
//! whose 2-D spectrum has the same flat amplitude on every frequency bin
//! inside the configured annulus, with class-specific phases. All classes
//! therefore share a single power spectrum — class identity lives entirely
//! in the spatial arrangement of the texture, which local convolutional
//! features can read but spectral energy summaries cannot. Each image
//! overlays a randomly shifted copy of its class texture on a smooth random
//! low-frequency background plus faint pixel noise. Class sizes follow an
//! exponential head-to-tail profile, so the corpus is long-tailed by
//! construction. Every pixel of every image is a pure function of
//! `(spec.seed, sample index)`, which makes corpora bit-reproducible and
//! generation order irrelevant.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::blobio;
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, Fnv1a64};
use crate::nn::{rng_from_seed, Rng};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusSpec {
    pub num_classes: usize,
    /// Sample count of class 0, the head of the distribution.
    pub head_count: usize,
    /// head count divided by tail count, >= 1.
    pub imbalance_ratio: f64,
    /// Square image side; must be a positive multiple of 8.
    pub image_size: usize,
    pub channels: usize,
    /// Class textures live in this band, in cycles per image width.
    pub texture_frequency_band: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_classes: 6,
            head_count: 160,
            imbalance_ratio: 64.0,
            image_size: 64,
            channels: 1,
            texture_frequency_band: (8.0, 16.0),
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.head_count < 2 {
            return Err(Error::Validation("head_count must be at least 2".into()));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(Error::Validation(format!(
                "imbalance_ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::Validation(format!(
                "image_size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::Validation("channels must be >= 1".into()));
        }
        let (lo, hi) = self.texture_frequency_band;
        if !(lo > 0.0 && hi >= lo && hi <= self.image_size as f64 / 2.0) {
            return Err(Error::Validation(format!(
                "texture band ({lo}, {hi}) must satisfy 0 < lo <= hi <= size/2"
            )));
        }
        let (pairs, self_conj) = self.band_bin_counts();
        if pairs + self_conj == 0 {
            return Err(Error::Validation(format!(
                "texture band ({lo}, {hi}) contains no representable frequency on a \
                 {0}x{0} grid",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Per-class sample counts: `round(head * ratio^(-j/(K-1)))`, floored at 2
    /// so every class can appear in both a train and a validation split.
    pub fn class_counts(&self) -> Vec<usize> {
        let k = self.num_classes;
        (0..k)
            .map(|j| {
                let exp = -(j as f64) / (k as f64 - 1.0);
                let n = (self.head_count as f64 * self.imbalance_ratio.powf(exp)).round() as usize;
                n.max(2)
            })
            .collect()
    }

    pub fn total_count(&self) -> usize {
        self.class_counts().iter().sum()
    }

    /// Counts of DFT bins inside the band annulus, reduced to one
    /// representative per conjugate pair, split into (pairs, self-conjugate).
    fn band_bin_counts(&self) -> (usize, usize) {
        let mut pairs = 0;
        let mut self_conj = 0;
        for_each_band_bin(self.image_size, self.texture_frequency_band, |_, _, is_self| {
            if is_self {
                self_conj += 1;
            } else {
                pairs += 1;
            }
        });
        (pairs, self_conj)
    }

    /// The fixed texture of one class: a zero-mean, unit-variance pattern
    /// whose spectrum covers every bin of the band annulus with one shared
    /// amplitude and class-specific phases. On the discrete torus distinct
    /// bins are exactly orthogonal, so the normalization is analytic and all
    /// classes carry identical power spectra; only the spatial arrangement
    /// differs.
    pub fn canonical_texture(&self, class: usize) -> Array2<f64> {
        let s = self.image_size;
        let tau = std::f64::consts::TAU;
        let mut rng: Rng =
            rng_from_seed(derive_seed(self.seed, &["texture", &class.to_string()]));
        let mut tex = Array2::<f64>::zeros((s, s));
        let mut pairs = 0usize;
        let mut self_conj = 0usize;
        for_each_band_bin(s, self.texture_frequency_band, |a, b, is_self| {
            // A self-conjugate bin must stay real, so its only phase freedom
            // is a sign; a conjugate pair gets a full random phase.
            let (amp, phase) = if is_self {
                self_conj += 1;
                (if rng.gen_range(0..2u32) == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                pairs += 1;
                (1.0, rng.gen_range(0.0..tau))
            };
            for y in 0..s {
                for x in 0..s {
                    let cycles = (a * x + b * y) as f64 / s as f64;
                    tex[[y, x]] += amp * (tau * cycles + phase).cos();
                }
            }
        });
        // Each conjugate pair contributes exactly 1/2 to the variance and
        // each self-conjugate bin exactly 1 (cosines at distinct bins are
        // orthogonal over the grid), with zero mean.
        let scale = 1.0 / (pairs as f64 * 0.5 + self_conj as f64).sqrt();
        tex.mapv_inplace(|v| v * scale);
        tex
    }
}

/// Visits the conjugate-pair representative of every DFT bin whose radial
/// frequency lies inside `band` (in cycles per image), passing the integer
/// bin coordinates and whether the bin is its own conjugate.
fn for_each_band_bin(size: usize, band: (f64, f64), mut visit: impl FnMut(usize, usize, bool)) {
    let s = size;
    let signed = |k: usize| if k <= s / 2 { k as f64 } else { k as f64 - s as f64 };
    for a in 0..s {
        for b in 0..s {
            let conj = ((s - a) % s, (s - b) % s);
            if (a, b) > conj {
                continue;
            }
            let r = (signed(a).powi(2) + signed(b).powi(2)).sqrt();
            if r < band.0 || r > band.1 {
                continue;
            }
            visit(a, b, (a, b) == conj);
        }
    }
}

/// One image with its class label. Pixels are (channels, h, w) in [0, 1].
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub pixels: Array3<f32>,
    pub label: u32,
}

impl LabeledImage {
    pub fn new(pixels: Array3<f32>, label: u32, num_classes: usize) -> Result<Self> {
        if label as usize >= num_classes {
            return Err(Error::Validation(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Validation("pixels must be finite and within [0, 1]".into()));
        }
        Ok(LabeledImage { pixels, label })
    }
}

/// A generated corpus: contiguous image stack plus labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    /// Shape (n, channels, size, size), values in [0, 1].
    pub images: Array4<f32>,
    pub labels: Vec<u32>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f32> {
        self.images.index_axis(ndarray::Axis(0), i)
    }

    pub fn labeled_image(&self, i: usize) -> LabeledImage {
        LabeledImage { pixels: self.image(i).to_owned(), label: self.labels[i] }
    }

    /// Observed per-class counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.spec.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Images converted to f64 for the numeric pipeline.
    pub fn images_f64(&self) -> Array4<f64> {
        self.images.mapv(|v| v as f64)
    }
}

/// Generates the full corpus described by `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let counts = spec.class_counts();
    let n: usize = counts.iter().sum();
    let s = spec.image_size;
    let c = spec.channels;
    let mut images = Array4::<f32>::zeros((n, c, s, s));
    let mut labels = Vec::with_capacity(n);
    let textures: Vec<Array2<f64>> =
        (0..spec.num_classes).map(|j| spec.canonical_texture(j)).collect();

    let mut index = 0usize;
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let img = generate_image(spec, &textures[class], index);
            images.index_axis_mut(ndarray::Axis(0), index).assign(&img);
            labels.push(class as u32);
            index += 1;
        }
    }
    Ok(Corpus { spec: spec.clone(), images, labels })
}

/// Renders one image as a pure function of (spec.seed, index): a toroidally
/// shifted copy of the class texture over a smooth background plus noise.
fn generate_image(spec: &CorpusSpec, texture: &Array2<f64>, index: usize) -> Array3<f32> {
    let mut rng: Rng = rng_from_seed(derive_seed(spec.seed, &["sample", &index.to_string()]));
    let s = spec.image_size;
    let sf = s as f64;
    let tau = std::f64::consts::TAU;

    // Shared pattern parameters, drawn once per image in a fixed order.
    let base = 0.5 + rng.gen_range(-0.05..0.05);
    let mut background = Vec::with_capacity(3);
    for _ in 0..3 {
        let amp = rng.gen_range(0.02..0.05);
        let f = rng.gen_range(0.4..2.0);
        let ori: f64 = rng.gen_range(0.0..tau);
        let phase = rng.gen_range(0.0..tau);
        background.push((amp, f * ori.cos() * tau / sf, f * ori.sin() * tau / sf, phase));
    }
    let tex_amp = rng.gen_range(0.14..0.18);
    let shift_y = rng.gen_range(0..s);
    let shift_x = rng.gen_range(0..s);

    let mut img = Array3::<f32>::zeros((spec.channels, s, s));
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base + tex_amp * texture[[(y + shift_y) % s, (x + shift_x) % s]];
            for &(amp, gx, gy, phase) in &background {
                v += amp * (gx * xf + gy * yf + phase).cos();
            }
            for ch in 0..spec.channels {
                let noisy = v + rng.gen_range(-0.02..0.02);
                img[[ch, y, x]] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// Stratified cross-validation fold labels, one per sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FoldAssignment {
    pub fold_count: usize,
    pub folds: Vec<u32>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn val_indices(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Stable digest of the assignment; identical split inputs hash equal.
    pub fn identity_hash(&self) -> String {
        let mut h = Fnv1a64::new();
        h.update(&(self.fold_count as u64).to_le_bytes());
        for &f in &self.folds {
            h.update(&f.to_le_bytes());
        }
        format!("{:016x}", h.finish())
    }
}

/// Stratified fold assignment: within each class, samples are shuffled with
/// a class-specific seed and dealt round-robin across folds, so every fold's
/// class mix approximates the corpus mix.
pub fn assign_folds(labels: &[u32], fold_count: usize, seed: u64) -> Result<FoldAssignment> {
    if labels.is_empty() {
        return Err(Error::Validation("cannot assign folds over an empty corpus".into()));
    }
    if fold_count < 2 {
        return Err(Error::Validation(format!("fold_count must be >= 2, got {fold_count}")));
    }
    if labels.len() < fold_count {
        return Err(Error::Validation(format!(
            "{} samples cannot fill {fold_count} folds",
            labels.len()
        )));
    }
    let num_classes = *labels.iter().max().unwrap() as usize + 1;
    let mut folds = vec![0u32; labels.len()];
    for class in 0..num_classes {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] as usize == class).collect();
        let mut rng: Rng =
            rng_from_seed(derive_seed(seed, &["folds", &class.to_string()]));
        // Fisher-Yates shuffle.
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        // Rotate the starting fold per class so small classes do not all
        // land their first sample in fold 0.
        let offset = if members.is_empty() { 0 } else { rng.gen_range(0..fold_count) };
        for (pos, &idx) in members.iter().enumerate() {
            folds[idx] = ((pos + offset) % fold_count) as u32;
        }
    }
    Ok(FoldAssignment { fold_count, folds, seed })
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    format_version: u32,
    spec: CorpusSpec,
    num_images: usize,
    image_shape: [usize; 3],
    class_counts: Vec<usize>,
    images_checksum: String,
    labels_checksum: String,
}

/// Writes `manifest.json`, `images.f32le` and `labels.u32le` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let image_bytes = blobio::f32s_to_le_bytes(corpus.images.as_slice().unwrap());
    let label_bytes = blobio::u32s_to_le_bytes(&corpus.labels);
    let images_checksum = blobio::write_blob(&dir.join("images.f32le"), &image_bytes)?;
    let labels_checksum = blobio::write_blob(&dir.join("labels.u32le"), &label_bytes)?;
    let (_, c, h, w) = corpus.images.dim();
    let manifest = CorpusManifest {
        format_version: CORPUS_FORMAT_VERSION,
        spec: corpus.spec.clone(),
        num_images: corpus.len(),
        image_shape: [c, h, w],
        class_counts: corpus.class_counts(),
        images_checksum,
        labels_checksum,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a corpus directory, verifying version, sizes and checksums.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    let image_bytes =
        blobio::read_blob_checked(&dir.join("images.f32le"), &manifest.images_checksum, "images")?;
    let label_bytes =
        blobio::read_blob_checked(&dir.join("labels.u32le"), &manifest.labels_checksum, "labels")?;
    let images_flat = blobio::f32s_from_le_bytes(&image_bytes)?;
    let labels = blobio::u32s_from_le_bytes(&label_bytes)?;
    let [c, h, w] = manifest.image_shape;
    if labels.len() != manifest.num_images {
        return Err(Error::CorruptCorpus(format!(
            "manifest declares {} images but label blob holds {}",
            manifest.num_images,
            labels.len()
        )));
    }
    if images_flat.len() != manifest.num_images * c * h * w {
        return Err(Error::CorruptCorpus(format!(
            "manifest declares {} images of {c}x{h}x{w} but image blob holds {} values",
            manifest.num_images,
            images_flat.len()
        )));
    }
    if labels.iter().any(|&l| l as usize >= manifest.spec.num_classes) {
        return Err(Error::CorruptCorpus("label outside declared class range".into()));
    }
    let images = Array4::from_shape_vec((manifest.num_images, c, h, w), images_flat)
        .map_err(|e| Error::CorruptCorpus(e.to_string()))?;
    Ok(Corpus { spec: manifest.spec, images, labels })
}
