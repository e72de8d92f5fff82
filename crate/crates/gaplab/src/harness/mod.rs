//! Experiment orchestration. One run: generate or load the corpus, train or
//! load the autoencoder, build each latent condition (scramble, descramble,
//! decode), train classifiers per (condition × space × fold) on identical
//! folds, compute the reconstruction-vs-latent gap with significance, and
//! assemble the report. The ablation ladder and the throughput benchmark
//! ride on the same prepared state.
//!
//! Determinism: every classifier seed is derived from the global seed and
//! the cell coordinates. Image- and reconstruction-space seeds do not
//! include the condition — image inputs are condition-independent, and the
//! reconstruction inputs are pixel-identical across conditions by exact
//! invertibility — so condition comparisons isolate the latent arrangement
//! rather than reshuffling initializations.

pub mod config;
pub mod report;
pub mod trainer;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array4, Axis};

use crate::autoenc::scramble::fit_scrambler;
use crate::autoenc::{
    fidelity_from_pairs, fit_latent_stats, load_autoencoder, train_autoencoder, AeTrainOptions,
    Autoencoder, FidelityReport,
};
use crate::corpus::{assign_folds, generate_corpus, load_corpus, FoldAssignment};
use crate::hashing::derive_seed;
use crate::memtrack;
use crate::metrics::MetricReport;
use crate::nets::{ImageClassifier, LatentClassifier};
use crate::{Error, Result};

pub use config::{
    load_experiment_config, AeRecipe, BenchConfig, ClassifierRecipe, ConditionKind,
    ExperimentConfig, LossKind, SpaceKind,
};
pub use report::{
    compute_gap, emit_report, write_bench_csv, AblationFoldRow, AblationRow, BenchPath, BenchRow,
    CellStatus, CellSummary, FidelityRow, GapReport, GapRow, MetricCell, ScatterPoint,
    REPORT_FORMAT_VERSION,
};
pub use trainer::{eval_logits, train_classifier_fold, ClsModel, FoldInputs, FoldTrainResult};

pub const LATENTS_FORMAT_VERSION: u32 = 1;

/// Corpus, folds, autoencoder, and raw latents — the state every later
/// stage reads from.
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub images: Array4<f64>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub folds: FoldAssignment,
    pub ae: Autoencoder,
    pub raw_latents: Array4<f64>,
}

/// One latent condition: the scrambled latents the latent classifier sees
/// and the decoded round-trip images the reconstruction classifier sees.
pub struct ConditionData {
    pub condition: ConditionKind,
    pub scrambled: Array4<f64>,
    pub recons: Array4<f64>,
    pub fidelity: FidelityReport,
    /// Max |pixel| deviation from the plain-condition reconstructions.
    pub rs_input_max_dev: f64,
}

pub fn prepare_experiment(config: &ExperimentConfig) -> Result<PreparedExperiment> {
    config.validate()?;
    let config_hash = config.config_hash();
    let corpus = match &config.corpus_path {
        Some(path) => load_corpus(path)?,
        None => generate_corpus(&config.corpus)?,
    };
    let images = corpus.images_f64();
    let labels = corpus.labels.clone();
    let num_classes = corpus.spec.num_classes;
    let folds = assign_folds(&labels, config.folds, derive_seed(config.seed, &["folds"]))?;
    let ae = match &config.autoencoder.checkpoint {
        Some(path) => {
            let ae = load_autoencoder(path)?;
            let (_, c, h, w) = images.dim();
            if ae.config.in_channels != c || ae.config.image_size != h || h != w {
                return Err(Error::Config(format!(
                    "autoencoder checkpoint expects {}x{}x{} inputs, corpus has {c}x{h}x{w}",
                    ae.config.in_channels, ae.config.image_size, ae.config.image_size
                )));
            }
            ae
        }
        None => {
            let options = AeTrainOptions {
                epochs: config.autoencoder.epochs,
                learning_rate: config.autoencoder.learning_rate,
                batch_size: config.autoencoder.batch_size,
                seed: derive_seed(config.seed, &["autoencoder"]),
            };
            train_autoencoder(&images, &config.autoencoder.config, &options)?.0
        }
    };
    let raw_latents = ae.encode(&images)?;
    Ok(PreparedExperiment {
        config: config.clone(),
        config_hash,
        images,
        labels,
        num_classes,
        folds,
        ae,
        raw_latents,
    })
}

fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Builds one condition's data. `plain_recons` is `decode(E(x))`, shared by
/// the caller so every condition is measured against the same reference.
pub fn prepare_condition(
    prep: &PreparedExperiment,
    condition: ConditionKind,
    plain_recons: &Array4<f64>,
) -> Result<ConditionData> {
    let (_, c, h, w) = prep.raw_latents.dim();
    let scrambler = fit_scrambler(
        condition.scrambler_kind(),
        derive_seed(prep.config.seed, &["scramble", condition.tag()]),
        (c, h, w),
    )?;
    let scrambled = scrambler.scramble_batch(&prep.raw_latents)?;
    let recons = prep.ae.decode(&scrambler.descramble_batch(&scrambled)?)?;
    let rs_input_max_dev = max_abs_diff(&recons, plain_recons);
    let fidelity = fidelity_from_pairs(&recons, &prep.images)?;
    Ok(ConditionData { condition, scrambled, recons, fidelity, rs_input_max_dev })
}

/// Seed for one classifier cell. The condition only enters for the latent
/// space; see the module docs for why.
pub fn cell_seed(global: u64, condition: ConditionKind, space: SpaceKind, fold: usize) -> u64 {
    let fold_tag = fold.to_string();
    match space {
        SpaceKind::Image => derive_seed(global, &["cls", "image", &fold_tag]),
        SpaceKind::Reconstruction => derive_seed(global, &["cls", "reconstruction", &fold_tag]),
        SpaceKind::Latent => derive_seed(global, &["cls", "latent", condition.tag(), &fold_tag]),
    }
}

pub struct SpaceFoldData {
    pub train_x: Array4<f64>,
    pub train_y: Vec<u32>,
    pub val_x: Array4<f64>,
    pub val_y: Vec<u32>,
}

/// Assembles the train/val tensors one cell trains on. Latent inputs are
/// normalized with statistics fitted on that fold's training split only.
pub fn space_fold_inputs(
    prep: &PreparedExperiment,
    data: &ConditionData,
    space: SpaceKind,
    fold: usize,
) -> Result<SpaceFoldData> {
    let train_idx = prep.folds.train_indices(fold);
    let val_idx = prep.folds.val_indices(fold);
    let train_y: Vec<u32> = train_idx.iter().map(|&i| prep.labels[i]).collect();
    let val_y: Vec<u32> = val_idx.iter().map(|&i| prep.labels[i]).collect();
    let source = match space {
        SpaceKind::Image => &prep.images,
        SpaceKind::Reconstruction => &data.recons,
        SpaceKind::Latent => &data.scrambled,
    };
    let mut train_x = source.select(Axis(0), &train_idx);
    let mut val_x = source.select(Axis(0), &val_idx);
    if space == SpaceKind::Latent {
        let stats = fit_latent_stats(&train_x)?;
        train_x = stats.normalize(&train_x)?;
        val_x = stats.normalize(&val_x)?;
    }
    Ok(SpaceFoldData { train_x, train_y, val_x, val_y })
}

pub struct ThreeSpaceOutcome {
    pub cells: Vec<MetricCell>,
    pub summaries: Vec<CellSummary>,
    /// Teacher logits over each reconstruction fold's training rows, for
    /// distillation into the matching latent-space student.
    pub teacher_logits: BTreeMap<(ConditionKind, usize), Array2<f64>>,
    /// Fold-0 models kept for the throughput benchmark.
    pub bench_latent: Option<LatentClassifier>,
    pub bench_image: Option<ImageClassifier>,
}

/// Trains every configured (condition × space × fold) cell. The image space
/// does not depend on the condition, so its folds are trained once and the
/// rows repeated; reconstruction is processed before latent within each
/// condition so distillation teachers already exist.
pub fn run_three_space(
    prep: &PreparedExperiment,
    cond_data: &[ConditionData],
) -> Result<ThreeSpaceOutcome> {
    let recipe = &prep.config.classifier;
    let spaces: Vec<SpaceKind> = [SpaceKind::Image, SpaceKind::Reconstruction, SpaceKind::Latent]
        .into_iter()
        .filter(|s| prep.config.spaces.contains(s))
        .collect();
    let mut cells = Vec::new();
    let mut image_cache: BTreeMap<usize, MetricCell> = BTreeMap::new();
    let mut teacher_logits = BTreeMap::new();
    let mut bench_latent = None;
    let mut bench_image = None;

    for data in cond_data {
        for &space in &spaces {
            for fold in 0..prep.config.folds {
                if space == SpaceKind::Image {
                    if let Some(cached) = image_cache.get(&fold) {
                        cells.push(MetricCell { condition: data.condition, ..cached.clone() });
                        continue;
                    }
                }
                let seed = cell_seed(prep.config.seed, data.condition, space, fold);
                let split = space_fold_inputs(prep, data, space, fold)?;
                let inputs = FoldInputs {
                    train_x: &split.train_x,
                    train_y: &split.train_y,
                    val_x: &split.val_x,
                    val_y: &split.val_y,
                    num_classes: prep.num_classes,
                };
                let teacher = if recipe.distill && space == SpaceKind::Latent {
                    match teacher_logits.get(&(data.condition, fold)) {
                        Some(t) => Some(t),
                        None => {
                            log::warn!(
                                "skipping latent fold {fold} under {}: its reconstruction teacher diverged",
                                data.condition
                            );
                            cells.push(diverged_cell(data.condition, space, fold, seed, split.val_y.len()));
                            continue;
                        }
                    }
                } else {
                    None
                };
                match train_classifier_fold(&inputs, recipe, space, teacher, seed) {
                    Ok(out) => {
                        let cell = MetricCell {
                            condition: data.condition,
                            space,
                            fold,
                            seed,
                            status: CellStatus::Ok,
                            bacc: Some(out.eval.bacc),
                            auc: Some(out.eval.auc),
                            mcc: Some(out.eval.mcc),
                            best_epoch: out.best_epoch,
                            epochs_run: out.epochs_run,
                            val_size: split.val_y.len(),
                        };
                        if space == SpaceKind::Reconstruction {
                            let logits = trainer::eval_logits(
                                &out.model,
                                &split.train_x,
                                recipe.batch_size,
                                recipe,
                            )?;
                            teacher_logits.insert((data.condition, fold), logits);
                            if fold == 0 && bench_image.is_none() {
                                if let ClsModel::Image(m) = out.model {
                                    bench_image = Some(m);
                                }
                            }
                        } else if space == SpaceKind::Latent && fold == 0 && bench_latent.is_none()
                        {
                            if let ClsModel::Latent(m) = out.model {
                                bench_latent = Some(m);
                            }
                        }
                        if space == SpaceKind::Image {
                            image_cache.insert(fold, cell.clone());
                        }
                        cells.push(cell);
                    }
                    Err(Error::Divergence(msg)) => {
                        log::warn!(
                            "fold {fold} diverged ({} / {space}): {msg}; excluded from aggregation",
                            data.condition
                        );
                        let cell = diverged_cell(data.condition, space, fold, seed, split.val_y.len());
                        if space == SpaceKind::Image {
                            image_cache.insert(fold, cell.clone());
                        }
                        cells.push(cell);
                    }
                    Err(other) => return Err(other),
                }
            }
        }
    }

    cells.sort_by_key(|c| (c.condition, c.space, c.fold));
    let summaries = summarize_cells(&cells)?;
    Ok(ThreeSpaceOutcome { cells, summaries, teacher_logits, bench_latent, bench_image })
}

fn diverged_cell(
    condition: ConditionKind,
    space: SpaceKind,
    fold: usize,
    seed: u64,
    val_size: usize,
) -> MetricCell {
    MetricCell {
        condition,
        space,
        fold,
        seed,
        status: CellStatus::Diverged,
        bacc: None,
        auc: None,
        mcc: None,
        best_epoch: 0,
        epochs_run: 0,
        val_size,
    }
}

fn summarize_cells(cells: &[MetricCell]) -> Result<Vec<CellSummary>> {
    let mut keys: Vec<(ConditionKind, SpaceKind)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.condition, c.space)) {
            keys.push((c.condition, c.space));
        }
    }
    keys.sort();
    let mut out = Vec::new();
    for (condition, space) in keys {
        let evals: Vec<crate::metrics::FoldEval> = cells
            .iter()
            .filter(|c| c.condition == condition && c.space == space)
            .filter_map(|c| match (c.bacc, c.auc, c.mcc) {
                (Some(bacc), Some(auc), Some(mcc)) => {
                    Some(crate::metrics::FoldEval { bacc, auc, mcc })
                }
                _ => None,
            })
            .collect();
        if evals.is_empty() {
            continue;
        }
        out.push(CellSummary {
            condition,
            space,
            folds_used: evals.len(),
            metrics: MetricReport::from_fold_evals(&evals)?,
        });
    }
    Ok(out)
}

const HP_GRID_LR: [f64; 3] = [3e-4, 1e-3, 3e-3];
const HP_GRID_WD: [f64; 2] = [0.0, 1e-4];

struct RungOutcome {
    folds: Vec<AblationFoldRow>,
    folds_used: usize,
    mean_bacc: Option<f64>,
}

fn run_rung(
    prep: &PreparedExperiment,
    data: &ConditionData,
    recipe: &ClassifierRecipe,
    teachers: Option<&BTreeMap<(ConditionKind, usize), Array2<f64>>>,
) -> Result<RungOutcome> {
    let mut folds = Vec::new();
    for fold in 0..prep.config.folds {
        let seed = cell_seed(prep.config.seed, data.condition, SpaceKind::Latent, fold);
        let split = space_fold_inputs(prep, data, SpaceKind::Latent, fold)?;
        let inputs = FoldInputs {
            train_x: &split.train_x,
            train_y: &split.train_y,
            val_x: &split.val_x,
            val_y: &split.val_y,
            num_classes: prep.num_classes,
        };
        let teacher = if recipe.distill {
            let map = teachers.ok_or_else(|| {
                Error::Validation("distillation rung without reconstruction teachers".into())
            })?;
            Some(map.get(&(data.condition, fold)).ok_or_else(|| {
                Error::Validation(format!(
                    "distillation rung is missing the fold {fold} teacher under {}",
                    data.condition
                ))
            })?)
        } else {
            None
        };
        match train_classifier_fold(&inputs, recipe, SpaceKind::Latent, teacher, seed) {
            Ok(out) => folds.push(AblationFoldRow {
                fold,
                seed,
                status: CellStatus::Ok,
                bacc: Some(out.eval.bacc),
                auc: Some(out.eval.auc),
                mcc: Some(out.eval.mcc),
            }),
            Err(Error::Divergence(msg)) => {
                log::warn!("ablation fold {fold} diverged: {msg}; excluded");
                folds.push(AblationFoldRow {
                    fold,
                    seed,
                    status: CellStatus::Diverged,
                    bacc: None,
                    auc: None,
                    mcc: None,
                });
            }
            Err(other) => return Err(other),
        }
    }
    let survivors: Vec<f64> = folds.iter().filter_map(|f| f.bacc).collect();
    let mean_bacc = if survivors.is_empty() {
        None
    } else {
        Some(survivors.iter().sum::<f64>() / survivors.len() as f64)
    };
    Ok(RungOutcome { folds_used: survivors.len(), folds, mean_bacc })
}

fn rung_row(
    name: &str,
    data: &ConditionData,
    recipe: &ClassifierRecipe,
    outcome: RungOutcome,
) -> AblationRow {
    AblationRow {
        rung: name.to_string(),
        condition: data.condition,
        distill: recipe.distill,
        noise_cond: recipe.noise_cond,
        learning_rate: recipe.learning_rate,
        weight_decay: recipe.weight_decay,
        folds: outcome.folds,
        folds_used: outcome.folds_used,
        mean_bacc: outcome.mean_bacc,
    }
}

/// The five-rung latent-space ladder on one condition: the configured
/// recipe as-is, plus distillation, plus a small learning-rate × weight-decay
/// grid, then noise conditioning and the distill+noise combination at the
/// grid winner. Rungs share the three-space latent fold seeds, so the
/// baseline rung reproduces the latent cells bit for bit.
pub fn run_ablation_ladder(
    prep: &PreparedExperiment,
    data: &ConditionData,
    teachers: &BTreeMap<(ConditionKind, usize), Array2<f64>>,
) -> Result<Vec<AblationRow>> {
    let base = ClassifierRecipe {
        distill: false,
        noise_cond: false,
        ..prep.config.classifier.clone()
    };
    let mut rows = Vec::new();

    let baseline = run_rung(prep, data, &base, None)?;
    let baseline_mean = baseline.mean_bacc;
    rows.push(rung_row("baseline", data, &base, baseline));

    let distill_recipe = ClassifierRecipe { distill: true, ..base.clone() };
    let distilled = run_rung(prep, data, &distill_recipe, Some(teachers))?;
    rows.push(rung_row("distill", data, &distill_recipe, distilled));

    // Grid selection by mean validation balanced accuracy over surviving
    // folds; ties keep the earliest grid point. The (base lr, base wd) point
    // reuses the baseline result — identical recipe, identical seeds.
    let mut best: Option<(f64, f64, RungOutcome)> = None;
    for &lr in &HP_GRID_LR {
        for &wd in &HP_GRID_WD {
            let candidate = ClassifierRecipe { learning_rate: lr, weight_decay: wd, ..base.clone() };
            let outcome = if lr == base.learning_rate && wd == base.weight_decay {
                RungOutcome {
                    folds: rows[0].folds.clone(),
                    folds_used: rows[0].folds_used,
                    mean_bacc: baseline_mean,
                }
            } else {
                run_rung(prep, data, &candidate, None)?
            };
            let score = outcome.mean_bacc.unwrap_or(f64::NEG_INFINITY);
            let current = best.as_ref().map_or(f64::NEG_INFINITY, |(_, _, o)| {
                o.mean_bacc.unwrap_or(f64::NEG_INFINITY)
            });
            if best.is_none() || score > current {
                best = Some((lr, wd, outcome));
            }
        }
    }
    let (best_lr, best_wd, best_outcome) = best.expect("grid is non-empty");
    let tuned = ClassifierRecipe { learning_rate: best_lr, weight_decay: best_wd, ..base.clone() };
    rows.push(rung_row("hp_tuned", data, &tuned, best_outcome));

    let noise_recipe = ClassifierRecipe { noise_cond: true, ..tuned.clone() };
    let noised = run_rung(prep, data, &noise_recipe, None)?;
    rows.push(rung_row("hp_noise_cond", data, &noise_recipe, noised));

    let both_recipe = ClassifierRecipe { distill: true, noise_cond: true, ..tuned };
    let both = run_rung(prep, data, &both_recipe, Some(teachers))?;
    rows.push(rung_row("hp_distill_noise_cond", data, &both_recipe, both));

    Ok(rows)
}

/// Everything `run_experiment` leaves behind: the report plus the pieces the
/// throughput benchmark reuses.
pub struct ExperimentArtifacts {
    pub report: GapReport,
    pub prepared: PreparedExperiment,
    pub bench_latent: Option<LatentClassifier>,
    pub bench_image: Option<ImageClassifier>,
}

/// The full pipeline: prepare, train all cells, compute the gap table and
/// significance, optionally run the ablation ladder, and emit the report
/// into `out_dir` when given. The run manifest is persisted before any
/// training starts.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentArtifacts> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let manifest = serde_json::json!({
            "format_version": REPORT_FORMAT_VERSION,
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "config": config,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(dir.join("experiment.json"), text)?;
    }

    let prep = prepare_experiment(config)?;
    let mut conditions = config.conditions.clone();
    conditions.sort();
    let plain_recons = prep.ae.decode(&prep.raw_latents)?;
    let cond_data: Vec<ConditionData> = conditions
        .iter()
        .map(|&c| prepare_condition(&prep, c, &plain_recons))
        .collect::<Result<_>>()?;

    let outcome = run_three_space(&prep, &cond_data)?;
    let (gaps, overall_wilcoxon) = compute_gap(&outcome.cells, config.folds)?;

    let fidelity: Vec<FidelityRow> = cond_data
        .iter()
        .map(|d| FidelityRow {
            condition: d.condition,
            psnr_mean: d.fidelity.psnr_mean,
            psnr_std: d.fidelity.psnr_std,
            ssim_mean: d.fidelity.ssim_mean,
            ssim_std: d.fidelity.ssim_std,
            rs_input_max_dev: d.rs_input_max_dev,
        })
        .collect();
    let scatter: Vec<ScatterPoint> = gaps
        .iter()
        .filter_map(|row| {
            let gap = row.gap_rs_ls_pp?;
            let fid = fidelity.iter().find(|f| f.condition == row.condition)?;
            Some(ScatterPoint { condition: row.condition, psnr: fid.psnr_mean, gap_bacc_pp: gap })
        })
        .collect();

    let ablation = if config.run_ablation {
        let data = cond_data
            .iter()
            .find(|d| d.condition == config.ablation_condition)
            .expect("validated: ablation condition is configured");
        run_ablation_ladder(&prep, data, &outcome.teacher_logits)?
    } else {
        Vec::new()
    };

    let expected_cells = conditions.len() * config.spaces.len() * config.folds;
    let incomplete = outcome.cells.len() != expected_cells
        || outcome.cells.iter().any(|c| c.status == CellStatus::Diverged)
        || ablation
            .iter()
            .any(|r| r.folds.iter().any(|f| f.status == CellStatus::Diverged));

    let report = GapReport {
        format_version: REPORT_FORMAT_VERSION,
        config_hash: prep.config_hash.clone(),
        seed: config.seed,
        fold_count: config.folds,
        fold_hash: prep.folds.identity_hash(),
        incomplete,
        cells: outcome.cells,
        summaries: outcome.summaries,
        gaps,
        overall_wilcoxon,
        fidelity,
        scatter,
        ablation,
        throughput: Vec::new(),
    };
    if let Some(dir) = out_dir {
        emit_report(&report, dir)?;
    }
    Ok(ExperimentArtifacts {
        report,
        prepared: prep,
        bench_latent: outcome.bench_latent,
        bench_image: outcome.bench_image,
    })
}

/// Runs just the ablation ladder and what it depends on: the reconstruction
/// space (whose trained folds provide the distillation teachers) and the
/// latent space, on the ablation condition only.
pub fn run_ablation_only(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentArtifacts> {
    let mut cfg = config.clone();
    cfg.run_ablation = true;
    cfg.conditions = vec![cfg.ablation_condition];
    cfg.spaces = vec![SpaceKind::Latent, SpaceKind::Reconstruction];
    run_experiment(&cfg, out_dir)
}

/// Wall-clock samples/sec and peak live tensor bytes for the two inference
/// paths: classify the latent directly, or decode it and classify the
/// pixels. Each (path, batch size) pair is measured over at least
/// `bench.target_secs` of steady-state iteration after warmup.
pub fn benchmark_throughput(
    latent_cls: &LatentClassifier,
    image_cls: &ImageClassifier,
    ae: &Autoencoder,
    latents: &Array4<f64>,
    bench: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if latents.dim().0 == 0 {
        return Err(Error::Validation("benchmark needs at least one latent".into()));
    }
    if bench.batch_sizes.is_empty() {
        return Err(Error::Validation("no benchmark batch sizes".into()));
    }
    let mut rows = Vec::new();
    for &batch_size in &bench.batch_sizes {
        let idx: Vec<usize> = (0..batch_size).map(|i| i % latents.dim().0).collect();
        let batch = latents.select(Axis(0), &idx);
        for path in [BenchPath::Latent, BenchPath::Reconstruction] {
            let run = || -> Result<()> {
                match path {
                    BenchPath::Latent => {
                        latent_cls.forward(&batch, None)?;
                    }
                    BenchPath::Reconstruction => {
                        image_cls.forward(&ae.decode(&batch)?)?;
                    }
                }
                Ok(())
            };
            run()?;
            run()?;
            let base = memtrack::current_bytes();
            memtrack::reset_peak();
            run()?;
            let peak_delta = memtrack::peak_bytes().saturating_sub(base);
            let peak_mib =
                memtrack::tracking_active().then(|| peak_delta as f64 / (1024.0 * 1024.0));
            let start = Instant::now();
            let mut iterations = 0usize;
            loop {
                run()?;
                iterations += 1;
                if start.elapsed().as_secs_f64() >= bench.target_secs && iterations >= 3 {
                    break;
                }
            }
            let elapsed_secs = start.elapsed().as_secs_f64();
            rows.push(BenchRow {
                path,
                batch_size,
                iterations,
                elapsed_secs,
                samples_per_sec: (iterations * batch_size) as f64 / elapsed_secs,
                peak_mib,
            });
        }
    }
    Ok(rows)
}

/// Writes an encoded latent stack with a checksummed manifest.
pub fn save_latents(latents: &Array4<f64>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let flat: Vec<f32> = latents.iter().map(|&v| v as f32).collect();
    let bytes = crate::blobio::f32s_to_le_bytes(&flat);
    let checksum = crate::blobio::write_blob(&dir.join("latents.blob"), &bytes)?;
    let (n, c, h, w) = latents.dim();
    let manifest = serde_json::json!({
        "format_version": LATENTS_FORMAT_VERSION,
        "shape": [n, c, h, w],
        "checksum": checksum,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join("latents.json"), text)?;
    Ok(())
}

pub fn load_latents(dir: &Path) -> Result<Array4<f64>> {
    #[derive(serde::Deserialize)]
    struct Manifest {
        format_version: u32,
        shape: [usize; 4],
        checksum: String,
    }
    let text = std::fs::read_to_string(dir.join("latents.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != LATENTS_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: LATENTS_FORMAT_VERSION,
        });
    }
    let bytes =
        crate::blobio::read_blob_checked(&dir.join("latents.blob"), &manifest.checksum, "latents")?;
    let flat = crate::blobio::f32s_from_le_bytes(&bytes)?;
    let [n, c, h, w] = manifest.shape;
    if flat.len() != n * c * h * w {
        return Err(Error::CorruptCorpus(format!(
            "latents: {} values for shape {:?}",
            flat.len(),
            manifest.shape
        )));
    }
    let values: Vec<f64> = flat.into_iter().map(f64::from).collect();
    Array4::from_shape_vec((n, c, h, w), values)
        .map_err(|e| Error::CorruptCorpus(format!("latents: {e}")))
}
