//! Experiment configuration: which corpus, which autoencoder, which latent
//! conditions and evaluation spaces, and how the per-fold classifiers are
//! trained. A config plus the global seed fully determines every run; the
//! hash of the canonical JSON encoding is stamped into reports so numbers
//! stay traceable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoenc::scramble::ScramblerKind;
use crate::autoenc::AeConfig;
use crate::corpus::CorpusSpec;
use crate::hashing::fnv1a64;
use crate::losses::LdamConfig;
use crate::nets::{ConvStageSpec, SigmaSchedule, DEFAULT_EMB_WIDTH};
use crate::{Error, Result};

/// How the latent space is transformed before the latent classifier sees it.
/// Every condition is exactly invertible, so all of them carry the same
/// information; they differ only in how that information is arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Plain,
    OrthogonalChannelMix,
    FrequencyPermutation,
}

impl ConditionKind {
    pub fn scrambler_kind(self) -> ScramblerKind {
        match self {
            ConditionKind::Plain => ScramblerKind::Identity,
            ConditionKind::OrthogonalChannelMix => ScramblerKind::OrthogonalChannelMix,
            ConditionKind::FrequencyPermutation => ScramblerKind::FrequencyPermutation,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ConditionKind::Plain => "plain",
            ConditionKind::OrthogonalChannelMix => "orthogonal_channel_mix",
            ConditionKind::FrequencyPermutation => "frequency_permutation",
        }
    }

    /// Accepts both the full snake_case name and the short CLI alias.
    pub fn parse_flag(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ConditionKind::Plain),
            "orth" | "orthogonal_channel_mix" => Ok(ConditionKind::OrthogonalChannelMix),
            "freq" | "frequency_permutation" => Ok(ConditionKind::FrequencyPermutation),
            other => Err(Error::Validation(format!(
                "unknown condition {other:?}; expected plain, orth, or freq"
            ))),
        }
    }
}

impl std::fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Which representation the classifier is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Image,
    Latent,
    Reconstruction,
}

impl SpaceKind {
    pub fn tag(self) -> &'static str {
        match self {
            SpaceKind::Image => "image",
            SpaceKind::Latent => "latent",
            SpaceKind::Reconstruction => "reconstruction",
        }
    }

    pub fn parse_flag(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(SpaceKind::Image),
            "latent" => Ok(SpaceKind::Latent),
            "recon" | "reconstruction" => Ok(SpaceKind::Reconstruction),
            other => Err(Error::Validation(format!(
                "unknown space {other:?}; expected image, latent, or recon"
            ))),
        }
    }
}

impl std::fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Ldam,
}

/// Autoencoder source: train one from the recipe below, or load a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AeRecipe {
    /// Load this checkpoint instead of training when set.
    pub checkpoint: Option<PathBuf>,
    pub config: AeConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for AeRecipe {
    fn default() -> Self {
        AeRecipe {
            checkpoint: None,
            config: AeConfig::default(),
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 16,
        }
    }
}

/// Everything the per-fold classifier trainer needs: loss, optimizer
/// settings, early stopping, and the optional distillation / noise
/// conditioning additions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierRecipe {
    pub loss: LossKind,
    pub ldam: LdamConfig,
    pub epochs: usize,
    /// Early stopping: stop after this many epochs without a new best
    /// validation balanced accuracy, then restore the best weights.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Add an image-space teacher term to the loss (latent space only).
    pub distill: bool,
    pub distill_alpha: f64,
    /// Train with per-sample Gaussian latent corruption and FiLM conditioning
    /// on the noise level (latent space only).
    pub noise_cond: bool,
    pub schedule: SigmaSchedule,
    pub emb_width: usize,
    pub image_spec: ConvStageSpec,
    pub latent_spec: ConvStageSpec,
}

impl Default for ClassifierRecipe {
    fn default() -> Self {
        ClassifierRecipe {
            loss: LossKind::Ldam,
            // Deferred reweighting at 1/6 of the epoch budget, matching the
            // margin loss convention for short schedules.
            ldam: LdamConfig { drw_epoch: 5, ..LdamConfig::default() },
            epochs: 30,
            patience: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            distill: false,
            distill_alpha: 0.5,
            noise_cond: false,
            schedule: SigmaSchedule::default(),
            emb_width: DEFAULT_EMB_WIDTH,
            image_spec: ConvStageSpec::default(),
            latent_spec: ConvStageSpec { stem_patch: 1, ..ConvStageSpec::default() },
        }
    }
}

impl ClassifierRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("classifier epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("bad weight decay {}", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.distill_alpha) {
            return Err(Error::Config(format!("distill alpha {} outside [0, 1]", self.distill_alpha)));
        }
        if self.emb_width == 0 {
            return Err(Error::Config("noise embedding width must be positive".into()));
        }
        self.schedule.validate()?;
        self.image_spec.validate()?;
        self.latent_spec.validate()?;
        Ok(())
    }
}

/// Throughput benchmark settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    /// Steady-state measurement window per (path, batch size) in seconds.
    pub target_secs: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { batch_sizes: vec![1, 4, 16], target_secs: 10.0 }
    }
}

/// Top-level experiment description. Defaults give the full three-condition,
/// three-space, five-fold run on the long-tailed grating corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    pub conditions: Vec<ConditionKind>,
    pub spaces: Vec<SpaceKind>,
    /// Load a saved corpus from this directory instead of generating one.
    pub corpus_path: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub autoencoder: AeRecipe,
    pub classifier: ClassifierRecipe,
    /// Run the five-rung ablation ladder on `ablation_condition`.
    pub run_ablation: bool,
    pub ablation_condition: ConditionKind,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            folds: 5,
            conditions: vec![
                ConditionKind::Plain,
                ConditionKind::OrthogonalChannelMix,
                ConditionKind::FrequencyPermutation,
            ],
            spaces: vec![SpaceKind::Image, SpaceKind::Latent, SpaceKind::Reconstruction],
            corpus_path: None,
            corpus: CorpusSpec::default(),
            autoencoder: AeRecipe::default(),
            classifier: ClassifierRecipe::default(),
            run_ablation: false,
            ablation_condition: ConditionKind::FrequencyPermutation,
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("no latent conditions configured".into()));
        }
        if has_duplicates(&self.conditions) {
            return Err(Error::Config("duplicate latent condition".into()));
        }
        if self.spaces.is_empty() {
            return Err(Error::Config("no evaluation spaces configured".into()));
        }
        if has_duplicates(&self.spaces) {
            return Err(Error::Config("duplicate evaluation space".into()));
        }
        self.corpus.validate()?;
        self.autoencoder.config.validate()?;
        if self.corpus_path.is_none() {
            if self.autoencoder.config.image_size != self.corpus.image_size {
                return Err(Error::Config(format!(
                    "autoencoder image size {} vs corpus image size {}",
                    self.autoencoder.config.image_size, self.corpus.image_size
                )));
            }
            if self.autoencoder.config.in_channels != self.corpus.channels {
                return Err(Error::Config(format!(
                    "autoencoder channels {} vs corpus channels {}",
                    self.autoencoder.config.in_channels, self.corpus.channels
                )));
            }
        }
        self.classifier.validate()?;
        if self.classifier.distill && !self.spaces.contains(&SpaceKind::Reconstruction) {
            return Err(Error::Config(
                "distillation needs the reconstruction space trained as teacher".into(),
            ));
        }
        if self.run_ablation {
            if !self.conditions.contains(&self.ablation_condition) {
                return Err(Error::Config(format!(
                    "ablation condition {} is not among the configured conditions",
                    self.ablation_condition
                )));
            }
            if !self.spaces.contains(&SpaceKind::Reconstruction) {
                return Err(Error::Config(
                    "the ablation ladder distills from reconstruction-space teachers; \
                     include the reconstruction space"
                        .into(),
                ));
            }
        }
        if self.bench.batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Config("benchmark batch size of zero".into()));
        }
        if !(self.bench.target_secs.is_finite() && self.bench.target_secs > 0.0) {
            return Err(Error::Config(format!(
                "bad benchmark window {} s",
                self.bench.target_secs
            )));
        }
        Ok(())
    }

    /// Hash of the canonical JSON encoding; stamps reports and manifests.
    pub fn config_hash(&self) -> String {
        let encoded = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(encoded.as_bytes()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        Ok(config)
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}

/// Reads, parses, and validates a TOML experiment config.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    config.validate()?;
    Ok(config)
}
