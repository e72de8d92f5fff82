//! Release gate: ten ordered checks covering the exact signed-rank statistic,
//! enumeration-oracle equivalence, conditioning identities, distillation loss
//! reductions, gradient correctness, metric oracles, scrambler invertibility,
//! the desk-scale latent-vs-reconstruction gap, inference throughput
//! direction, and byte-level report determinism. Each check prints one
//! pass/fail line; the cheap checks run first so a broken build fails fast,
//! and the long training run is shared by the checks that need its models.

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::Rng as _;

use gaplab::autoenc::scramble::{fit_scrambler, ScramblerKind};
use gaplab::harness::{
    benchmark_throughput, run_experiment, BenchPath, ConditionKind, ExperimentArtifacts,
    ExperimentConfig, SpaceKind,
};
use gaplab::losses::{
    cross_entropy_batch, distill_loss_batch, ldam_loss_batch, DistillConfig, LdamConfig,
};
use gaplab::metrics::{auc_macro_ovr, balanced_accuracy, mcc_multiclass, psnr, ssim};
use gaplab::nets::{ConvStageSpec, LatentClsConfig, LatentClassifier};
use gaplab::nn::{rng_from_seed, Module, Rng};
use gaplab::stats::{wilcoxon_signed_rank, wilcoxon_signed_rank_diffs, Sidedness, TestMethod};

// The throughput check reports peak live heap per inference path, which
// requires the counting allocator to serve this whole test binary.
#[global_allocator]
static ALLOCATOR: gaplab::memtrack::CountingAllocator = gaplab::memtrack::CountingAllocator;

#[test]
fn acceptance() {
    let mut failed: Vec<&'static str> = Vec::new();
    let mut check = |name: &'static str, body: &mut dyn FnMut()| {
        let t = Instant::now();
        match catch_unwind(AssertUnwindSafe(body)) {
            Ok(()) => println!("{name}: pass ({:.1}s)", t.elapsed().as_secs_f64()),
            Err(_) => {
                println!("{name}: FAIL ({:.1}s)", t.elapsed().as_secs_f64());
                failed.push(name);
            }
        }
    };

    check(" 1. exact signed-rank extreme", &mut uniform_sign_extreme);
    check(" 2. signed-rank enumeration oracle", &mut signed_rank_oracle);
    check(" 4. conditioning starts as identity", &mut conditioning_identity);
    check(" 5. distillation loss reductions", &mut distill_reductions);
    check(" 6. gradient finite-difference suite", &mut gradient_suite);
    check(" 7. metric oracles", &mut metric_oracles);
    check(" 8. scrambler invertibility", &mut scrambler_invertibility);

    let gap_run: RefCell<Option<ExperimentArtifacts>> = RefCell::new(None);
    check(" 3. latent-vs-reconstruction gap", &mut || {
        *gap_run.borrow_mut() = Some(gap_phenomenon());
    });
    check(" 9. throughput direction", &mut || {
        throughput_direction(gap_run.borrow().as_ref().expect("needs the gap run"));
    });
    check("10. byte-identical reports", &mut report_determinism);

    assert!(failed.is_empty(), "failed checks: {failed:?}");
}

/// Twenty pairs whose second member always wins: the one-sided exact p-value
/// is the single most extreme sign pattern out of 2^20.
fn uniform_sign_extreme() {
    let mut rng = rng_from_seed(41);
    let pairs: Vec<(f64, f64)> = (0..20)
        .map(|i| {
            let base = rng.gen_range(0.3..0.7);
            (base, base + 0.01 + 0.003 * i as f64)
        })
        .collect();
    let result = wilcoxon_signed_rank(&pairs, Sidedness::Greater).unwrap();
    assert_eq!(result.method, TestMethod::Exact);
    let expected = 1.0 / (1u64 << 20) as f64;
    assert!(
        (result.p_value - expected).abs() <= 1e-9,
        "p {} vs {expected}",
        result.p_value
    );
}

/// Brute-force signed-rank p-value: average ranks of |d| with ties shared,
/// then enumerate every sign assignment. Rank sums are multiples of one half,
/// so the comparisons below are exact in f64.
fn oracle_signed_rank(diffs: &[f64], sidedness: Sidedness) -> Option<f64> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nz[a].abs().partial_cmp(&nz[b].abs()).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let observed: f64 = (0..n).filter(|&k| nz[k] > 0.0).map(|k| ranks[k]).sum();
    let mut ge = 0u64;
    let mut le = 0u64;
    for mask in 0u32..(1u32 << n) {
        let w: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w >= observed {
            ge += 1;
        }
        if w <= observed {
            le += 1;
        }
    }
    let total = (1u64 << n) as f64;
    let p_greater = ge as f64 / total;
    let p_less = le as f64 / total;
    Some(match sidedness {
        Sidedness::Greater => p_greater,
        Sidedness::Less => p_less,
        Sidedness::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    })
}

fn signed_rank_oracle() {
    let mut rng = rng_from_seed(42);
    let sides = [Sidedness::Greater, Sidedness::Less, Sidedness::TwoSided];
    let mut done = 0;
    while done < 200 {
        let n = rng.gen_range(1..=12);
        // A coarse value grid forces ties and zero differences.
        let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-6i32..=6) as f64 / 4.0).collect();
        let Some(expected) = oracle_signed_rank(&diffs, sides[done % 3]) else {
            continue; // all-zero draws carry no test
        };
        let got = wilcoxon_signed_rank_diffs(&diffs, sides[done % 3]).unwrap();
        assert_eq!(got.method, TestMethod::Exact, "n small enough for exact");
        assert!(
            (got.p_value - expected).abs() <= 1e-12,
            "diffs {diffs:?}: p {} vs oracle {expected}",
            got.p_value
        );
        done += 1;
    }
}

/// A freshly built conditioned classifier must ignore the noise level until
/// training moves the modulation weights: bit-identical logits across sigma.
fn conditioning_identity() {
    let model = LatentClassifier::new(LatentClsConfig {
        latent_channels: 4,
        num_classes: 6,
        spec: ConvStageSpec { channels: vec![8, 12], blocks_per_stage: 1, stem_patch: 1 },
        emb_width: 16,
        seed: 99,
    })
    .unwrap();
    let mut rng = rng_from_seed(43);
    for batch in 0..10 {
        let x = Array4::from_shape_fn((10, 4, 8, 8), |_| rng.gen_range(-2.0..2.0));
        let s1: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..2.0)).collect();
        let s2: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..2.0)).collect();
        let a = model.forward(&x, Some(&s1)).unwrap();
        let b = model.forward(&x, Some(&s2)).unwrap();
        assert_eq!(a.dim(), b.dim());
        for (va, vb) in a.iter().zip(b.iter()) {
            assert_eq!(va.to_bits(), vb.to_bits(), "batch {batch}: logits moved with sigma");
        }
    }
}

fn distill_reductions() {
    let mut rng = rng_from_seed(44);
    // Full student weight: the teacher term vanishes.
    for _ in 0..20 {
        let n = rng.gen_range(1..6);
        let k = rng.gen_range(2..6);
        let z_s = Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0));
        let z_t = Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0));
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let (blended, _) = distill_loss_batch(&z_s, &z_t, &y, &DistillConfig { alpha: 1.0 }).unwrap();
        let (ce, _) = cross_entropy_batch(&z_s, &y).unwrap();
        assert!((blended - ce).abs() <= 1e-9, "{blended} vs {ce}");
    }
    // Full teacher weight with a perfectly matched student: exactly zero.
    let z = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-3.0..3.0));
    let y = vec![0usize, 2, 3];
    let (zero, _) = distill_loss_batch(&z, &z, &y, &DistillConfig { alpha: 0.0 }).unwrap();
    assert_eq!(zero, 0.0);
    // Worked midpoint: z_S=[1,0], z_T=[0,0], label 0 at alpha one half.
    let z_s = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let z_t = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
    let (mid, _) = distill_loss_batch(&z_s, &z_t, &[0], &DistillConfig { alpha: 0.5 }).unwrap();
    assert!((mid - 0.6566).abs() <= 1e-4, "midpoint {mid}");
}

fn rel_close(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() <= 1e-2 * analytic.abs().max(fd.abs()).max(1e-3)
}

/// Central finite differences over every logit entry against the returned
/// analytic gradient.
fn fd_check_logit_grad(
    loss: &dyn Fn(&Array2<f64>) -> (f64, Array2<f64>),
    logits: &Array2<f64>,
) {
    let h = 1e-3;
    let (_, analytic) = loss(logits);
    for idx in 0..logits.len() {
        let mut plus = logits.clone();
        let mut minus = logits.clone();
        plus.as_slice_mut().unwrap()[idx] += h;
        minus.as_slice_mut().unwrap()[idx] -= h;
        let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * h);
        let a = analytic.as_slice().unwrap()[idx];
        assert!(rel_close(a, fd), "logit grad {idx}: analytic {a} vs fd {fd}");
    }
}

fn random_logits(rng: &mut Rng, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0))
}

/// Fifty random small instances across the four training losses plus the
/// conditioned model's parameters (modulation generator, embedding, head,
/// trunk), all against central differences with step 1e-3.
fn gradient_suite() {
    let mut rng = rng_from_seed(45);

    for _ in 0..15 {
        let (n, k) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let logits = random_logits(&mut rng, n, k);
        fd_check_logit_grad(&|z| cross_entropy_batch(z, &y).unwrap(), &logits);
    }

    for i in 0..15 {
        let (n, k) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(2..80)).collect();
        let config = LdamConfig::default();
        // Cover both sides of the deferred-reweighting switch.
        let epoch = if i % 2 == 0 { 0 } else { config.drw_epoch + 1 };
        let logits = random_logits(&mut rng, n, k);
        fd_check_logit_grad(
            &|z| ldam_loss_batch(z, &y, &counts, &config, epoch).unwrap(),
            &logits,
        );
    }

    for _ in 0..10 {
        let (n, k) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let z_t = random_logits(&mut rng, n, k);
        let alpha = rng.gen_range(0.1..0.9);
        let logits = random_logits(&mut rng, n, k);
        fd_check_logit_grad(
            &|z| distill_loss_batch(z, &z_t, &y, &DistillConfig { alpha }).unwrap(),
            &logits,
        );
    }

    // Conditioned model: cross-entropy at fixed noise levels, differentiated
    // through modulation, embedding, trunk, and head parameters alike.
    for instance in 0..10 {
        let mut model = LatentClassifier::new(LatentClsConfig {
            latent_channels: 2,
            num_classes: 3,
            spec: ConvStageSpec { channels: vec![4], blocks_per_stage: 1, stem_patch: 1 },
            emb_width: 6,
            seed: 1000 + instance,
        })
        .unwrap();
        // Jitter every parameter so the zero-initialized modulation path is
        // active and its upstream weights receive nonzero gradients.
        for p in model.params_mut() {
            p.value.mapv_inplace(|v| v + rng.gen_range(-0.1..0.1));
        }
        let x = Array4::from_shape_fn((2, 2, 4, 4), |_| rng.gen_range(-1.5..1.5));
        let sigmas: Vec<f64> = (0..2).map(|_| rng.gen_range(0.1..1.5)).collect();
        let y = vec![rng.gen_range(0..3), rng.gen_range(0..3)];

        model.zero_grad();
        let (logits, cache) = model.forward_t(&x, Some(&sigmas)).unwrap();
        let (_, dlogits) = cross_entropy_batch(&logits, &y).unwrap();
        model.backward(&cache, &dlogits);
        let grads: Vec<Vec<f64>> =
            model.params().iter().map(|p| p.grad.iter().copied().collect()).collect();

        let h = 1e-3;
        let param_count = grads.len();
        for pi in 0..param_count {
            for ci in 0..grads[pi].len() {
                let eval = |m: &LatentClassifier| {
                    let z = m.forward(&x, Some(&sigmas)).unwrap();
                    cross_entropy_batch(&z, &y).unwrap().0
                };
                model.params_mut()[pi].value.as_slice_mut().unwrap()[ci] += h;
                let up = eval(&model);
                model.params_mut()[pi].value.as_slice_mut().unwrap()[ci] -= 2.0 * h;
                let down = eval(&model);
                model.params_mut()[pi].value.as_slice_mut().unwrap()[ci] += h;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    rel_close(grads[pi][ci], fd),
                    "instance {instance} param {pi}[{ci}]: analytic {} vs fd {fd}",
                    grads[pi][ci]
                );
            }
        }
    }
}

fn oracle_bacc(labels: &[u32], preds: &[u32], k: usize) -> f64 {
    let mut recalls = Vec::new();
    for c in 0..k as u32 {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let hit = members.iter().filter(|&&i| preds[i] == c).count();
        recalls.push(hit as f64 / members.len() as f64);
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Pairwise positive-beats-negative counting, ties worth one half, averaged
/// over classes that have both kinds of sample.
fn oracle_auc(scores: &Array2<f64>, labels: &[u32]) -> f64 {
    let k = scores.ncols();
    let n = labels.len();
    let mut sum = 0.0;
    let mut counted = 0;
    for c in 0..k {
        let pos: Vec<usize> = (0..n).filter(|&i| labels[i] as usize == c).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| labels[i] as usize != c).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &i in &pos {
            for &j in &neg {
                let (a, b) = (scores[[i, c]], scores[[j, c]]);
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
        sum += wins / (pos.len() * neg.len()) as f64;
        counted += 1;
    }
    sum / counted as f64
}

/// Correlation between one-hot prediction and label indicators, summed over
/// classes — an algebraically different route to the confusion-matrix form.
fn oracle_mcc(labels: &[u32], preds: &[u32], k: usize) -> f64 {
    let n = labels.len() as f64;
    let mean = |xs: &[u32], c: u32| xs.iter().filter(|&&x| x == c).count() as f64 / n;
    let mut cov_lp = 0.0;
    let mut cov_ll = 0.0;
    let mut cov_pp = 0.0;
    for c in 0..k as u32 {
        let (ml, mp) = (mean(labels, c), mean(preds, c));
        for i in 0..labels.len() {
            let l = (labels[i] == c) as u8 as f64 - ml;
            let p = (preds[i] == c) as u8 as f64 - mp;
            cov_lp += l * p;
            cov_ll += l * l;
            cov_pp += p * p;
        }
    }
    let den = (cov_ll * cov_pp).sqrt();
    if den == 0.0 {
        0.0
    } else {
        cov_lp / den
    }
}

fn metric_oracles() {
    let mut rng = rng_from_seed(46);
    for _ in 0..500 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(k..=200);
        let mut labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let preds: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();
        // Half the scores land on a coarse grid so ties actually occur.
        let scores = Array2::from_shape_fn((n, k), |_| {
            if rng.gen_bool(0.5) {
                rng.gen_range(0..8) as f64 / 4.0
            } else {
                rng.gen_range(-2.0..2.0)
            }
        });

        let bacc = balanced_accuracy(&labels, &preds, k).unwrap();
        assert!((bacc - oracle_bacc(&labels, &preds, k)).abs() <= 1e-9);
        let mcc = mcc_multiclass(&labels, &preds, k).unwrap();
        assert!((mcc - oracle_mcc(&labels, &preds, k)).abs() <= 1e-9);
        let auc = auc_macro_ovr(&scores.view(), &labels).unwrap();
        assert!((auc - oracle_auc(&scores, &labels)).abs() <= 1e-9);
    }

    // Closed-form quality values: uniform absolute error 0.1 on a unit range
    // is 20 dB, 0.01 is 40 dB, and any image is perfectly similar to itself.
    let mut rng = rng_from_seed(47);
    let reference = Array3::from_shape_fn((1, 8, 8), |_| rng.gen_range(0.2..0.8));
    for (err, db) in [(0.1, 20.0), (0.01, 40.0)] {
        let test = reference.mapv(|v| v + err);
        let got = psnr(&test, &reference, 1.0).unwrap();
        assert!((got - db).abs() <= 1e-6, "uniform error {err}: {got} dB");
    }
    assert!((ssim(&reference, &reference, 1.0).unwrap() - 1.0).abs() <= 1e-9);
}

fn scrambler_invertibility() {
    let mut rng = rng_from_seed(48);
    let shape = (4usize, 8usize, 8usize);
    for kind in [
        ScramblerKind::Identity,
        ScramblerKind::OrthogonalChannelMix,
        ScramblerKind::FrequencyPermutation,
    ] {
        let scrambler = fit_scrambler(kind, 77, shape).unwrap();
        let x = Array4::from_shape_fn((1000, shape.0, shape.1, shape.2), |_| {
            rng.gen_range(-2.0..2.0)
        });
        let round = scrambler.descramble_batch(&scrambler.scramble_batch(&x).unwrap()).unwrap();
        let max_dev = x
            .iter()
            .zip(round.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-5, "{kind}: round trip moved values by {max_dev}");

        if kind == ScramblerKind::OrthogonalChannelMix {
            let mixed = scrambler.scramble_batch(&x).unwrap();
            for i in 0..x.dim().0 {
                let norm = |a: &Array4<f64>| {
                    a.index_axis(ndarray::Axis(0), i).iter().map(|v| v * v).sum::<f64>().sqrt()
                };
                let (before, after) = (norm(&x), norm(&mixed));
                assert!(
                    (before - after).abs() < 1e-5,
                    "sample {i}: norm {before} became {after}"
                );
            }
        }
    }
}

/// The long check: a full five-fold run on the default long-tailed corpus
/// with a trained autoencoder. Under the frequency permutation the decoded
/// view must be clearly easier to learn than the raw latent view, while the
/// decoded view itself barely moves between plain and permuted latents.
fn gap_phenomenon() -> ExperimentArtifacts {
    let mut config = ExperimentConfig::default();
    config.conditions = vec![ConditionKind::Plain, ConditionKind::FrequencyPermutation];
    config.spaces = vec![SpaceKind::Latent, SpaceKind::Reconstruction];
    config.validate().unwrap();

    let artifacts = run_experiment(&config, None).unwrap();
    let report = &artifacts.report;
    assert!(!report.incomplete, "a fold diverged");

    let row = |c: ConditionKind| report.gaps.iter().find(|r| r.condition == c).unwrap();
    let freq = row(ConditionKind::FrequencyPermutation);
    let plain = row(ConditionKind::Plain);

    let gap = freq.gap_rs_ls_pp.unwrap();
    assert!(gap >= 5.0, "reconstruction-over-latent gap only {gap:.2} points");
    let p = freq.t_test.as_ref().unwrap().p_value;
    assert!(p < 0.05, "gap not significant: p = {p}");

    let rs_shift =
        (freq.mean_bacc_rs.unwrap() - plain.mean_bacc_rs.unwrap()).abs() * 100.0;
    assert!(
        rs_shift < 2.0,
        "scrambling moved reconstruction accuracy by {rs_shift:.2} points"
    );
    artifacts
}

/// Classifying latents directly must beat decode-then-classify on both speed
/// and peak memory at every batch size, using the gap run's trained models.
fn throughput_direction(arts: &ExperimentArtifacts) {
    let latent_cls = arts.bench_latent.as_ref().expect("latent model from the gap run");
    let image_cls = arts.bench_image.as_ref().expect("decoder-side model from the gap run");
    let config = ExperimentConfig::default();
    let rows = benchmark_throughput(
        latent_cls,
        image_cls,
        &arts.prepared.ae,
        &arts.prepared.raw_latents,
        &config.bench,
    )
    .unwrap();
    for &batch in &config.bench.batch_sizes {
        let find = |p: BenchPath| {
            rows.iter().find(|r| r.path == p && r.batch_size == batch).unwrap()
        };
        let lat = find(BenchPath::Latent);
        let rec = find(BenchPath::Reconstruction);
        assert!(
            lat.samples_per_sec > rec.samples_per_sec,
            "batch {batch}: latent {:.1} S/s vs reconstruction {:.1} S/s",
            lat.samples_per_sec,
            rec.samples_per_sec
        );
        let (lm, rm) = (lat.peak_mib.unwrap(), rec.peak_mib.unwrap());
        assert!(lm < rm, "batch {batch}: latent peak {lm:.2} MiB vs reconstruction {rm:.2} MiB");
    }
}

/// Two runs from one (config, seed) must serialize to identical bytes.
fn report_determinism() {
    let mut config = ExperimentConfig::default();
    config.seed = 13;
    config.folds = 2;
    config.conditions = vec![ConditionKind::Plain, ConditionKind::FrequencyPermutation];
    config.spaces = vec![SpaceKind::Latent, SpaceKind::Reconstruction];
    config.corpus = gaplab::corpus::CorpusSpec {
        num_classes: 2,
        head_count: 10,
        imbalance_ratio: 2.0,
        image_size: 16,
        channels: 1,
        texture_frequency_band: (2.0, 6.0),
        seed: 3,
    };
    config.autoencoder.config = gaplab::autoenc::AeConfig {
        in_channels: 1,
        image_size: 16,
        latent_channels: 3,
        stage_widths: vec![6, 8],
    };
    config.autoencoder.epochs = 1;
    config.classifier.epochs = 2;
    config.classifier.patience = 2;
    config.classifier.batch_size = 8;
    config.classifier.emb_width = 8;
    let spec = ConvStageSpec { channels: vec![6, 8], blocks_per_stage: 1, stem_patch: 1 };
    config.classifier.image_spec = ConvStageSpec { stem_patch: 2, ..spec.clone() };
    config.classifier.latent_spec = spec;
    config.validate().unwrap();

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_experiment(&config, Some(dir_a.path())).unwrap();
    run_experiment(&config, Some(dir_b.path())).unwrap();
    let a = std::fs::read(dir_a.path().join("report.json")).unwrap();
    let b = std::fs::read(dir_b.path().join("report.json")).unwrap();
    assert!(a == b, "reports differ between identical runs");
}
