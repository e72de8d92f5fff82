//! Command-line driver: corpus generation, autoencoder training, latent
//! encoding, per-space classifier training, the ablation ladder, the full
//! gap report, and the throughput benchmark.
//!
//! Exit codes: 0 on success, 2 on validation/configuration/integrity
//! errors, 3 on training divergence, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gaplab::autoenc::{
    load_autoencoder, reconstruction_quality, save_autoencoder, train_autoencoder, AeTrainOptions,
};
use gaplab::corpus::{generate_corpus, load_corpus, save_corpus};
use gaplab::harness::{
    self, benchmark_throughput, cell_seed, load_experiment_config, prepare_condition,
    prepare_experiment, run_ablation_only, run_experiment, space_fold_inputs,
    train_classifier_fold, write_bench_csv, CellStatus, ClsModel, ConditionKind, ExperimentConfig,
    FoldInputs, MetricCell, SpaceKind,
};
use gaplab::hashing::derive_seed;
use gaplab::nets::{
    load_image_classifier, load_latent_classifier, save_image_classifier, save_latent_classifier,
};
use gaplab::{Error, Result};

// Benchmark rows report peak live heap bytes; that needs the counting
// allocator to serve every allocation in this process.
#[global_allocator]
static ALLOCATOR: gaplab::memtrack::CountingAllocator = gaplab::memtrack::CountingAllocator;

#[derive(Parser)]
#[command(
    name = "gaplab",
    version,
    about = "Latent-vs-reconstruction learnability experiments on synthetic long-tailed corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand: where the config lives and the
/// overrides that outrank it.
#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's fold count.
    #[arg(long)]
    folds: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => load_experiment_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(folds) = self.folds {
            config.folds = folds;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and save it.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the convolutional autoencoder on a corpus.
    TrainAe {
        #[command(flatten)]
        common: Common,
        /// Saved corpus directory; generated from the config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a corpus into latents, optionally scrambled by a condition.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        /// plain, orth, or freq.
        #[arg(long, default_value = "plain")]
        condition: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per-fold classifiers in one space under one condition.
    TrainCls {
        #[command(flatten)]
        common: Common,
        /// image, latent, or recon.
        #[arg(long)]
        space: String,
        /// plain, orth, or freq.
        #[arg(long, default_value = "plain")]
        condition: String,
        /// Add the image-space distillation term (latent space only).
        #[arg(long)]
        distill: bool,
        /// Train with noise conditioning (latent space only).
        #[arg(long)]
        noise_cond: bool,
        /// Directory of per-fold reconstruction-space teacher checkpoints,
        /// as written by `train-cls --space recon`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the five-rung latent-space ablation ladder.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full three-space experiment and emit the gap report.
    GapReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark latent-path vs decode-then-classify throughput and memory.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ae: PathBuf,
        /// Trained latent classifier checkpoint directory.
        #[arg(long)]
        latent_cls: PathBuf,
        /// Trained image/reconstruction classifier checkpoint directory.
        #[arg(long)]
        image_cls: PathBuf,
        /// Saved corpus to encode for realistic latents; generated from the
        /// config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, out } => {
            let config = common.load()?;
            let corpus = generate_corpus(&config.corpus)?;
            save_corpus(&corpus, &out)?;
            println!(
                "corpus: {} samples, {} classes, counts {:?} -> {}",
                corpus.len(),
                corpus.spec.num_classes,
                corpus.class_counts(),
                out.display()
            );
            Ok(())
        }
        Command::TrainAe { common, corpus, out } => {
            let config = common.load()?;
            let corpus = match corpus {
                Some(dir) => load_corpus(&dir)?,
                None => generate_corpus(&config.corpus)?,
            };
            let images = corpus.images_f64();
            let options = AeTrainOptions {
                epochs: config.autoencoder.epochs,
                learning_rate: config.autoencoder.learning_rate,
                batch_size: config.autoencoder.batch_size,
                seed: derive_seed(config.seed, &["autoencoder"]),
            };
            let (ae, history) = train_autoencoder(&images, &config.autoencoder.config, &options)?;
            save_autoencoder(&ae, &out)?;
            let fidelity = reconstruction_quality(&ae, &images)?;
            println!(
                "autoencoder: {} epochs, final loss {:.6}, psnr {:.2} dB, ssim {:.4} -> {}",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                fidelity.psnr_mean,
                fidelity.ssim_mean,
                out.display()
            );
            Ok(())
        }
        Command::Encode { common, corpus, ae, condition, out } => {
            let config = common.load()?;
            let condition = ConditionKind::parse_flag(&condition)?;
            let corpus = load_corpus(&corpus)?;
            let ae = load_autoencoder(&ae)?;
            let latents = ae.encode(&corpus.images_f64())?;
            let (_, c, h, w) = latents.dim();
            let scrambler = gaplab::autoenc::scramble::fit_scrambler(
                condition.scrambler_kind(),
                derive_seed(config.seed, &["scramble", condition.tag()]),
                (c, h, w),
            )?;
            let scrambled = scrambler.scramble_batch(&latents)?;
            harness::save_latents(&scrambled, &out)?;
            println!(
                "latents: {:?} under {} -> {}",
                scrambled.dim(),
                condition,
                out.display()
            );
            Ok(())
        }
        Command::TrainCls {
            common,
            space,
            condition,
            distill,
            noise_cond,
            teacher,
            corpus,
            ae,
            out,
        } => {
            let mut config = common.load()?;
            let space = SpaceKind::parse_flag(&space)?;
            let condition = ConditionKind::parse_flag(&condition)?;
            config.corpus_path = Some(corpus);
            config.autoencoder.checkpoint = Some(ae);
            config.classifier.distill = distill;
            config.classifier.noise_cond = noise_cond;
            if distill && teacher.is_none() {
                return Err(Error::Validation(
                    "distillation requires --teacher with reconstruction-space checkpoints".into(),
                ));
            }
            train_cls_command(&config, space, condition, teacher.as_deref(), &out)
        }
        Command::Ablation { common, out } => {
            let config = common.load()?;
            let artifacts = run_ablation_only(&config, Some(&out))?;
            for row in &artifacts.report.ablation {
                println!(
                    "{:<24} mean bacc {}  (lr {}, wd {}, distill {}, noise {})",
                    row.rung,
                    row.mean_bacc.map_or("n/a".into(), |v| format!("{v:.4}")),
                    row.learning_rate,
                    row.weight_decay,
                    row.distill,
                    row.noise_cond
                );
            }
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::GapReport { common, out } => {
            let config = common.load()?;
            let artifacts = run_experiment(&config, Some(&out))?;
            for row in &artifacts.report.gaps {
                println!(
                    "{:<24} LS {}  RS {}  gap {} pp  (t-test p {})",
                    row.condition.to_string(),
                    fmt4(row.mean_bacc_ls),
                    fmt4(row.mean_bacc_rs),
                    fmt4(row.gap_rs_ls_pp),
                    fmt4(row.t_test.as_ref().map(|t| t.p_value)),
                );
            }
            if artifacts.report.incomplete {
                println!("note: report is incomplete (diverged folds were excluded)");
            }
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::Bench { common, ae, latent_cls, image_cls, corpus, out } => {
            let config = common.load()?;
            let ae = load_autoencoder(&ae)?;
            let latent_cls = load_latent_classifier(&latent_cls)?;
            let image_cls = load_image_classifier(&image_cls)?;
            let corpus = match corpus {
                Some(dir) => load_corpus(&dir)?,
                None => generate_corpus(&config.corpus)?,
            };
            let latents = ae.encode(&corpus.images_f64())?;
            let rows = benchmark_throughput(&latent_cls, &image_cls, &ae, &latents, &config.bench)?;
            println!("{:<16} {:>6} {:>12} {:>10}", "path", "batch", "S/s", "MB");
            for row in &rows {
                println!(
                    "{:<16} {:>6} {:>12.2} {:>10}",
                    row.path.to_string(),
                    row.batch_size,
                    row.samples_per_sec,
                    row.peak_mib.map_or("n/a".into(), |v| format!("{v:.2}")),
                );
            }
            write_bench_csv(&rows, &out)?;
            println!("bench table -> {}", out.join("bench.csv").display());
            Ok(())
        }
    }
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

/// Trains `folds` classifiers in one (space, condition) cell, writing one
/// checkpoint per surviving fold plus a metrics table. Exits with the
/// divergence code when any fold diverges, keeping the survivors' artifacts.
fn train_cls_command(
    config: &ExperimentConfig,
    space: SpaceKind,
    condition: ConditionKind,
    teacher_dir: Option<&std::path::Path>,
    out: &std::path::Path,
) -> Result<()> {
    let prep = prepare_experiment(config)?;
    let plain_recons = prep.ae.decode(&prep.raw_latents)?;
    let data = prepare_condition(&prep, condition, &plain_recons)?;
    std::fs::create_dir_all(out)?;

    let recipe = &config.classifier;
    let mut cells: Vec<MetricCell> = Vec::new();
    let mut diverged = 0usize;
    for fold in 0..config.folds {
        let seed = cell_seed(config.seed, condition, space, fold);
        let split = space_fold_inputs(&prep, &data, space, fold)?;
        let inputs = FoldInputs {
            train_x: &split.train_x,
            train_y: &split.train_y,
            val_x: &split.val_x,
            val_y: &split.val_y,
            num_classes: prep.num_classes,
        };
        let teacher_logits = match teacher_dir {
            Some(dir) if recipe.distill => {
                let teacher = load_image_classifier(&dir.join(format!("fold_{fold}")))?;
                let teacher = ClsModel::Image(teacher);
                // Teachers read the reconstruction view of the same rows.
                let recon_split = space_fold_inputs(&prep, &data, SpaceKind::Reconstruction, fold)?;
                Some(harness::eval_logits(
                    &teacher,
                    &recon_split.train_x,
                    recipe.batch_size,
                    recipe,
                )?)
            }
            _ => None,
        };
        match train_classifier_fold(&inputs, recipe, space, teacher_logits.as_ref(), seed) {
            Ok(result) => {
                let fold_dir = out.join(format!("fold_{fold}"));
                match result.model {
                    ClsModel::Latent(m) => save_latent_classifier(&m, &fold_dir)?,
                    ClsModel::Image(m) => save_image_classifier(&m, &fold_dir)?,
                }
                println!(
                    "fold {fold}: bacc {:.4} auc {:.4} mcc {:.4} (best epoch {}/{})",
                    result.eval.bacc,
                    result.eval.auc,
                    result.eval.mcc,
                    result.best_epoch,
                    result.epochs_run
                );
                cells.push(MetricCell {
                    condition,
                    space,
                    fold,
                    seed,
                    status: CellStatus::Ok,
                    bacc: Some(result.eval.bacc),
                    auc: Some(result.eval.auc),
                    mcc: Some(result.eval.mcc),
                    best_epoch: result.best_epoch,
                    epochs_run: result.epochs_run,
                    val_size: split.val_y.len(),
                });
            }
            Err(Error::Divergence(msg)) => {
                eprintln!("fold {fold}: diverged ({msg})");
                diverged += 1;
                cells.push(MetricCell {
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
                    val_size: split.val_y.len(),
                });
            }
            Err(other) => return Err(other),
        }
    }

    let mut text = serde_json::to_string_pretty(&cells)?;
    text.push('\n');
    std::fs::write(out.join("metrics.json"), text)?;
    let survivors: Vec<f64> = cells.iter().filter_map(|c| c.bacc).collect();
    if !survivors.is_empty() {
        println!(
            "mean bacc over {} folds: {:.4}",
            survivors.len(),
            survivors.iter().sum::<f64>() / survivors.len() as f64
        );
    }
    println!("checkpoints -> {}", out.display());
    if diverged > 0 {
        return Err(Error::Divergence(format!(
            "{diverged} of {} folds diverged; surviving artifacts were kept",
            config.folds
        )));
    }
    Ok(())
}
