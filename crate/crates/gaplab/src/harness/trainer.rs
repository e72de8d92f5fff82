//! Per-fold classifier training: minibatch AdamW over one of the configured
//! losses, optional teacher distillation and noise conditioning, early
//! stopping on validation balanced accuracy, and a divergence guard that
//! turns a non-finite loss into an error instead of silently continuing.
//!
//! Three independent RNG streams are derived from the fold seed — model
//! init, batch shuffling, and noise draws — so switching distillation on or
//! off never shifts the other streams. That is what makes the α = 1
//! distillation run land bit-for-bit on the plain run.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;

use crate::hashing::derive_seed;
use crate::losses::{
    cross_entropy_batch, distill_loss_batch, ldam_loss_batch, DistillConfig,
};
use crate::metrics::{EvalBatch, FoldEval};
use crate::nets::{
    add_noise, ImageClassifier, ImageClsConfig, LatentClassifier, LatentClsConfig,
};
use crate::nn::{restore_values, rng_from_seed, snapshot_values, AdamW, Module};
use crate::{Error, Result};

use super::config::{ClassifierRecipe, LossKind, SpaceKind};

/// A trained classifier of either backbone shape, behind one interface.
#[derive(Debug)]
pub enum ClsModel {
    Latent(LatentClassifier),
    Image(ImageClassifier),
}

#[derive(Debug)]
pub enum ClsCache {
    Latent(crate::nets::LatentClsCache),
    Image(crate::nets::ImageClsCache),
}

impl ClsModel {
    pub fn forward(&self, x: &Array4<f64>, sigmas: Option<&[f64]>) -> Result<Array2<f64>> {
        match self {
            ClsModel::Latent(m) => m.forward(x, sigmas),
            ClsModel::Image(m) => {
                if sigmas.is_some() {
                    return Err(Error::Validation(
                        "image classifier has no noise conditioning path".into(),
                    ));
                }
                m.forward(x)
            }
        }
    }

    fn forward_t(&self, x: &Array4<f64>, sigmas: Option<&[f64]>) -> Result<(Array2<f64>, ClsCache)> {
        match self {
            ClsModel::Latent(m) => {
                let (logits, cache) = m.forward_t(x, sigmas)?;
                Ok((logits, ClsCache::Latent(cache)))
            }
            ClsModel::Image(m) => {
                if sigmas.is_some() {
                    return Err(Error::Validation(
                        "image classifier has no noise conditioning path".into(),
                    ));
                }
                let (logits, cache) = m.forward_t(x)?;
                Ok((logits, ClsCache::Image(cache)))
            }
        }
    }

    fn backward(&mut self, cache: &ClsCache, dlogits: &Array2<f64>) {
        match (self, cache) {
            (ClsModel::Latent(m), ClsCache::Latent(c)) => m.backward(c, dlogits),
            (ClsModel::Image(m), ClsCache::Image(c)) => m.backward(c, dlogits),
            _ => unreachable!("cache kind always matches the model that produced it"),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClsModel::Latent(m) => m.num_classes(),
            ClsModel::Image(m) => m.num_classes(),
        }
    }
}

impl Module for ClsModel {
    fn params(&self) -> Vec<&crate::nn::Param> {
        match self {
            ClsModel::Latent(m) => m.params(),
            ClsModel::Image(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        match self {
            ClsModel::Latent(m) => m.params_mut(),
            ClsModel::Image(m) => m.params_mut(),
        }
    }
}

/// One fold's train/val split, already in the representation the classifier
/// will consume (pixels, normalized latents, or reconstructions).
pub struct FoldInputs<'a> {
    pub train_x: &'a Array4<f64>,
    pub train_y: &'a [u32],
    pub val_x: &'a Array4<f64>,
    pub val_y: &'a [u32],
    pub num_classes: usize,
}

impl FoldInputs<'_> {
    fn validate(&self) -> Result<()> {
        if self.train_x.dim().0 != self.train_y.len() {
            return Err(Error::Shape(format!(
                "{} train images vs {} labels",
                self.train_x.dim().0,
                self.train_y.len()
            )));
        }
        if self.val_x.dim().0 != self.val_y.len() {
            return Err(Error::Shape(format!(
                "{} val images vs {} labels",
                self.val_x.dim().0,
                self.val_y.len()
            )));
        }
        if self.train_y.is_empty() || self.val_y.is_empty() {
            return Err(Error::Validation("empty train or val split".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Validation("zero classes".into()));
        }
        Ok(())
    }

    fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in self.train_y {
            counts[y as usize] += 1;
        }
        counts
    }
}

#[derive(Debug)]
pub struct FoldTrainResult {
    pub model: ClsModel,
    pub eval: FoldEval,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
}

fn build_model(
    inputs: &FoldInputs,
    recipe: &ClassifierRecipe,
    space: SpaceKind,
    seed: u64,
) -> Result<ClsModel> {
    let in_channels = inputs.train_x.dim().1;
    let init_seed = derive_seed(seed, &["init"]);
    match space {
        SpaceKind::Latent => Ok(ClsModel::Latent(LatentClassifier::new(LatentClsConfig {
            latent_channels: in_channels,
            num_classes: inputs.num_classes,
            spec: recipe.latent_spec.clone(),
            emb_width: recipe.emb_width,
            seed: init_seed,
        })?)),
        SpaceKind::Image | SpaceKind::Reconstruction => {
            Ok(ClsModel::Image(ImageClassifier::new(ImageClsConfig {
                in_channels,
                num_classes: inputs.num_classes,
                spec: recipe.image_spec.clone(),
                seed: init_seed,
            })?))
        }
    }
}

/// Trains one classifier on one fold and returns it with its best-epoch
/// validation metrics. `teacher_logits` must be aligned with the train rows
/// when distillation is on.
pub fn train_classifier_fold(
    inputs: &FoldInputs,
    recipe: &ClassifierRecipe,
    space: SpaceKind,
    teacher_logits: Option<&Array2<f64>>,
    seed: u64,
) -> Result<FoldTrainResult> {
    inputs.validate()?;
    recipe.validate()?;
    if recipe.noise_cond && space != SpaceKind::Latent {
        return Err(Error::Validation(format!(
            "noise conditioning only applies to the latent space, not {space}"
        )));
    }
    let distill = if recipe.distill {
        if space != SpaceKind::Latent {
            return Err(Error::Validation(format!(
                "distillation trains a latent-space student, not {space}"
            )));
        }
        let teacher = teacher_logits.ok_or_else(|| {
            Error::Validation("distillation requires teacher logits for the train split".into())
        })?;
        if teacher.dim() != (inputs.train_y.len(), inputs.num_classes) {
            return Err(Error::Shape(format!(
                "teacher logits {:?} vs expected ({}, {})",
                teacher.dim(),
                inputs.train_y.len(),
                inputs.num_classes
            )));
        }
        Some(DistillConfig { alpha: recipe.distill_alpha })
    } else {
        None
    };

    let mut model = build_model(inputs, recipe, space, seed)?;
    let mut shuffle_rng = rng_from_seed(derive_seed(seed, &["shuffle"]));
    let mut noise_rng = rng_from_seed(derive_seed(seed, &["noise"]));
    let mut opt = AdamW::new(recipe.learning_rate, recipe.weight_decay);
    let class_counts = inputs.train_class_counts();
    let train_labels: Vec<usize> = inputs.train_y.iter().map(|&y| y as usize).collect();

    let mut best_bacc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = snapshot_values(&model);
    let mut stall = 0usize;
    let mut epochs_run = 0usize;
    let mut train_losses = Vec::with_capacity(recipe.epochs);

    let n = train_labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=recipe.epochs {
        epochs_run = epoch;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(recipe.batch_size) {
            let xb = inputs.train_x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (x_in, sigmas) = if recipe.noise_cond {
                let s: Vec<f64> =
                    chunk.iter().map(|_| recipe.schedule.sample(&mut noise_rng)).collect();
                (add_noise(&xb, &s, &mut noise_rng)?, Some(s))
            } else {
                (xb, None)
            };
            let (logits, cache) = model.forward_t(&x_in, sigmas.as_deref())?;
            let (loss, dlogits) = match &distill {
                Some(cfg) => {
                    let zt = teacher_logits.expect("checked above").select(Axis(0), chunk);
                    distill_loss_batch(&logits, &zt, &yb, cfg)?
                }
                None => match recipe.loss {
                    LossKind::CrossEntropy => cross_entropy_batch(&logits, &yb)?,
                    LossKind::Ldam => {
                        ldam_loss_batch(&logits, &yb, &class_counts, &recipe.ldam, epoch)?
                    }
                },
            };
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss in epoch {epoch} ({space} space)"
                )));
            }
            loss_sum += loss * yb.len() as f64;
            model.zero_grad();
            model.backward(&cache, &dlogits);
            opt.step(&mut model.params_mut());
        }
        train_losses.push(loss_sum / n as f64);

        let val_bacc = eval_bacc(&model, inputs.val_x, inputs.val_y, inputs.num_classes, recipe)?;
        if !val_bacc.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite validation accuracy in epoch {epoch} ({space} space)"
            )));
        }
        if val_bacc > best_bacc {
            best_bacc = val_bacc;
            best_epoch = epoch;
            best_snapshot = snapshot_values(&model);
            stall = 0;
        } else {
            stall += 1;
            if stall >= recipe.patience {
                break;
            }
        }
    }

    restore_values(&mut model, &best_snapshot);
    let eval = eval_fold(&model, inputs.val_x, inputs.val_y, inputs.num_classes, recipe)?;
    Ok(FoldTrainResult { model, eval, best_epoch, epochs_run, train_losses })
}

/// Forward pass in evaluation batches. Noise-conditioned models are queried
/// at σ = 0, i.e. told explicitly that the input is clean.
pub fn eval_logits(
    model: &ClsModel,
    x: &Array4<f64>,
    batch_size: usize,
    recipe: &ClassifierRecipe,
) -> Result<Array2<f64>> {
    let n = x.dim().0;
    let mut out = Array2::zeros((n, model.num_classes()));
    let mut start = 0;
    while start < n {
        let stop = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..stop).collect();
        let xb = x.select(Axis(0), &idx);
        let logits = if recipe.noise_cond && matches!(model, ClsModel::Latent(_)) {
            let zeros = vec![0.0; idx.len()];
            model.forward(&xb, Some(&zeros))?
        } else {
            model.forward(&xb, None)?
        };
        out.slice_mut(ndarray::s![start..stop, ..]).assign(&logits);
        start = stop;
    }
    Ok(out)
}

fn eval_fold(
    model: &ClsModel,
    x: &Array4<f64>,
    y: &[u32],
    num_classes: usize,
    recipe: &ClassifierRecipe,
) -> Result<FoldEval> {
    let scores = eval_logits(model, x, recipe.batch_size, recipe)?;
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence("non-finite validation logits".into()));
    }
    EvalBatch::new(scores, y.to_vec(), num_classes)?.evaluate()
}

fn eval_bacc(
    model: &ClsModel,
    x: &Array4<f64>,
    y: &[u32],
    num_classes: usize,
    recipe: &ClassifierRecipe,
) -> Result<f64> {
    Ok(eval_fold(model, x, y, num_classes, recipe)?.bacc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ConvStageSpec;
    use ndarray::Array4;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_recipe() -> ClassifierRecipe {
        let spec = ConvStageSpec { channels: vec![6, 10], blocks_per_stage: 1, stem_patch: 1 };
        ClassifierRecipe {
            loss: LossKind::CrossEntropy,
            epochs: 12,
            patience: 6,
            batch_size: 8,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            emb_width: 8,
            image_spec: ConvStageSpec { stem_patch: 2, ..spec.clone() },
            latent_spec: spec,
            ..ClassifierRecipe::default()
        }
    }

    /// Two classes whose latents differ by a constant channel offset plus
    /// noise; linearly separable, so a few epochs suffice.
    fn separable_data(n_per_class: usize, seed: u64) -> (Array4<f64>, Vec<u32>) {
        let mut rng = rng_from_seed(seed);
        let n = 2 * n_per_class;
        let mut x = Array4::zeros((n, 3, 8, 8));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u32;
            let shift = if class == 0 { -0.8 } else { 0.8 };
            for v in x.index_axis_mut(Axis(0), i).iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = shift + 0.3 * e;
            }
            y.push(class);
        }
        (x, y)
    }

    fn split(
        x: &Array4<f64>,
        y: &[u32],
        n_train: usize,
    ) -> (Array4<f64>, Vec<u32>, Array4<f64>, Vec<u32>) {
        let train_idx: Vec<usize> = (0..n_train).collect();
        let val_idx: Vec<usize> = (n_train..y.len()).collect();
        (
            x.select(Axis(0), &train_idx),
            train_idx.iter().map(|&i| y[i]).collect(),
            x.select(Axis(0), &val_idx),
            val_idx.iter().map(|&i| y[i]).collect(),
        )
    }

    #[test]
    fn learns_a_separable_latent_problem() {
        let (x, y) = separable_data(16, 11);
        let (tx, ty, vx, vy) = split(&x, &y, 20);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let out =
            train_classifier_fold(&inputs, &tiny_recipe(), SpaceKind::Latent, None, 5).unwrap();
        assert!(out.eval.bacc > 0.9, "bacc {}", out.eval.bacc);
        assert!(out.best_epoch >= 1 && out.best_epoch <= out.epochs_run);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_results() {
        let (x, y) = separable_data(8, 3);
        let (tx, ty, vx, vy) = split(&x, &y, 10);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        recipe.epochs = 4;
        let a = train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 21).unwrap();
        let b = train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 21).unwrap();
        assert_eq!(a.eval.bacc, b.eval.bacc);
        assert_eq!(a.train_losses, b.train_losses);
        let la = eval_logits(&a.model, &vx, 8, &recipe).unwrap();
        let lb = eval_logits(&b.model, &vx, 8, &recipe).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn distill_alpha_one_matches_plain_training_exactly() {
        let (x, y) = separable_data(8, 9);
        let (tx, ty, vx, vy) = split(&x, &y, 10);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut plain = tiny_recipe();
        plain.epochs = 5;
        let mut with_teacher = plain.clone();
        with_teacher.distill = true;
        with_teacher.distill_alpha = 1.0;
        // Arbitrary finite teacher logits: at α = 1 they must not matter.
        let teacher = Array2::from_shape_fn((ty.len(), 2), |(i, j)| (i + 2 * j) as f64 * 0.1);
        let a = train_classifier_fold(&inputs, &plain, SpaceKind::Latent, None, 13).unwrap();
        let b =
            train_classifier_fold(&inputs, &with_teacher, SpaceKind::Latent, Some(&teacher), 13)
                .unwrap();
        assert_eq!(a.eval.bacc, b.eval.bacc);
        assert_eq!(a.train_losses, b.train_losses);
        let la = eval_logits(&a.model, &vx, 8, &plain).unwrap();
        let lb = eval_logits(&b.model, &vx, 8, &with_teacher).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn distillation_without_a_teacher_is_rejected() {
        let (x, y) = separable_data(4, 2);
        let (tx, ty, vx, vy) = split(&x, &y, 4);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        recipe.distill = true;
        let err =
            train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn noise_conditioning_outside_latent_space_is_rejected() {
        let (x, y) = separable_data(4, 2);
        let (tx, ty, vx, vy) = split(&x, &y, 4);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        recipe.noise_cond = true;
        let err = train_classifier_fold(&inputs, &recipe, SpaceKind::Image, None, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (x, y) = separable_data(6, 4);
        let (tx, ty, vx, vy) = split(&x, &y, 8);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        recipe.learning_rate = 1e300;
        recipe.epochs = 3;
        let err =
            train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn early_stopping_halts_after_patience_without_improvement() {
        let (x, y) = separable_data(6, 8);
        let (tx, ty, vx, vy) = split(&x, &y, 8);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        // Updates of ~1e-300 underflow against O(0.1) weights, so validation
        // accuracy is frozen at its epoch-1 value and patience must trip.
        recipe.learning_rate = 1e-300;
        recipe.epochs = 40;
        recipe.patience = 3;
        let out = train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 6).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.epochs_run, 1 + recipe.patience);
    }

    #[test]
    fn noise_conditioned_training_runs_and_evaluates_clean() {
        let (x, y) = separable_data(10, 15);
        let (tx, ty, vx, vy) = split(&x, &y, 14);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let mut recipe = tiny_recipe();
        recipe.noise_cond = true;
        recipe.epochs = 10;
        let out = train_classifier_fold(&inputs, &recipe, SpaceKind::Latent, None, 30).unwrap();
        assert!(out.eval.bacc > 0.75, "bacc {}", out.eval.bacc);
    }

    #[test]
    fn image_space_trains_on_small_pictures() {
        let mut rng = rng_from_seed(40);
        let n = 24;
        let mut x = Array4::zeros((n, 1, 8, 8));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u32;
            for (j, v) in x.index_axis_mut(Axis(0), i).iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                // Class 1 carries a vertical parity stripe, class 0 is flat.
                let stripe = if class == 1 && j % 2 == 0 { 0.9 } else { 0.0 };
                *v = stripe + 0.1 * e;
            }
            y.push(class);
        }
        let (tx, ty, vx, vy) = split(&x, &y, 16);
        let inputs =
            FoldInputs { train_x: &tx, train_y: &ty, val_x: &vx, val_y: &vy, num_classes: 2 };
        let out =
            train_classifier_fold(&inputs, &tiny_recipe(), SpaceKind::Image, None, 77).unwrap();
        assert!(out.eval.bacc > 0.9, "bacc {}", out.eval.bacc);
    }
}
