//! Classification and image-fidelity metrics.
//!
//! Classification metrics operate on per-sample class scores and integer
//! labels: balanced accuracy (mean per-class recall), macro one-vs-rest AUC
//! (Mann-Whitney form, ties count half), and the multiclass Matthews
//! correlation coefficient. Fidelity metrics are PSNR and Gaussian-windowed
//! SSIM over (channels, h, w) images.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and labels for one evaluation split.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    /// Shape (n, num_classes); higher score means more confident.
    pub scores: Array2<f64>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

/// Per-split metric values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FoldEval {
    pub bacc: f64,
    pub auc: f64,
    pub mcc: f64,
}

impl EvalBatch {
    pub fn new(scores: Array2<f64>, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if scores.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} score rows vs {} labels",
                scores.nrows(),
                labels.len()
            )));
        }
        if scores.ncols() != num_classes {
            return Err(Error::Shape(format!(
                "{} score columns vs {num_classes} classes",
                scores.ncols()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Validation("empty evaluation batch".into()));
        }
        if labels.iter().any(|&l| l as usize >= num_classes) {
            return Err(Error::Validation("label outside class range".into()));
        }
        Ok(EvalBatch { scores, labels, num_classes })
    }

    /// Argmax predictions; ties break toward the lower class index.
    pub fn predictions(&self) -> Vec<u32> {
        self.scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }

    pub fn evaluate(&self) -> Result<FoldEval> {
        let preds = self.predictions();
        Ok(FoldEval {
            bacc: balanced_accuracy(&self.labels, &preds, self.num_classes)?,
            auc: auc_macro_ovr(&self.scores.view(), &self.labels)?,
            mcc: mcc_multiclass(&self.labels, &preds, self.num_classes)?,
        })
    }
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(labels: &[u32], preds: &[u32], num_classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Validation("balanced accuracy of an empty set".into()));
    }
    if labels.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.iter().chain(preds).any(|&l| l as usize >= num_classes) {
        return Err(Error::Validation("label outside class range".into()));
    }
    let mut total = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&l, &p) in labels.iter().zip(preds) {
        total[l as usize] += 1;
        if l == p {
            correct[l as usize] += 1;
        }
    }
    let mut acc = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes {
        if total[c] > 0 {
            acc += correct[c] as f64 / total[c] as f64;
            present += 1;
        }
    }
    Ok(acc / present as f64)
}

/// Binary AUC for one score column via the rank-sum (Mann-Whitney) identity;
/// tied scores contribute one half.
pub fn auc_binary(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Shape("scores and flags differ in length".into()));
    }
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Validation("AUC needs both positive and negative samples".into()));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 =
        ranks.iter().zip(positives).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// 1-based ranks with ties replaced by their group average.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite score"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of ranks i+1 ..= j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Macro-averaged one-vs-rest AUC. Classes missing positives or negatives in
/// the batch are skipped with a warning; having no scoreable class at all is
/// an error.
pub fn auc_macro_ovr(scores: &ArrayView2<f64>, labels: &[u32]) -> Result<f64> {
    if scores.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score rows vs {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("AUC of an empty set".into()));
    }
    let k = scores.ncols();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..k {
        let flags: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
        let pos = flags.iter().filter(|&&b| b).count();
        if pos == 0 || pos == flags.len() {
            log::warn!("macro AUC: class {c} lacks positives or negatives, skipping");
            continue;
        }
        let col: Vec<f64> = scores.column(c).to_vec();
        sum += auc_binary(&col, &flags)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Validation("no class had both positives and negatives".into()));
    }
    Ok(sum / counted as f64)
}

/// Multiclass Matthews correlation coefficient (the R_K statistic computed
/// from the confusion matrix). Returns 0 when a marginal is degenerate and
/// the denominator vanishes.
pub fn mcc_multiclass(labels: &[u32], preds: &[u32], num_classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Validation("MCC of an empty set".into()));
    }
    if labels.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.iter().chain(preds).any(|&l| l as usize >= num_classes) {
        return Err(Error::Validation("label outside class range".into()));
    }
    let k = num_classes;
    let mut cm = vec![0.0f64; k * k];
    for (&l, &p) in labels.iter().zip(preds) {
        cm[l as usize * k + p as usize] += 1.0;
    }
    let s = labels.len() as f64;
    let c: f64 = (0..k).map(|i| cm[i * k + i]).sum();
    let t: Vec<f64> = (0..k).map(|i| (0..k).map(|j| cm[i * k + j]).sum()).collect();
    let p: Vec<f64> = (0..k).map(|j| (0..k).map(|i| cm[i * k + j]).sum()).collect();
    let dot: f64 = (0..k).map(|i| t[i] * p[i]).sum();
    let num = c * s - dot;
    let den_t = s * s - t.iter().map(|v| v * v).sum::<f64>();
    let den_p = s * s - p.iter().map(|v| v * v).sum::<f64>();
    let den = (den_t * den_p).sqrt();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Peak signal-to-noise ratio in dB for a given data range. A mean squared
/// error below 1e-10 reports the 100 dB cap.
pub fn psnr(test: &Array3<f64>, reference: &Array3<f64>, data_range: f64) -> Result<f64> {
    if test.dim() != reference.dim() {
        return Err(Error::Shape("PSNR inputs must share a shape".into()));
    }
    if data_range <= 0.0 {
        return Err(Error::Validation("data_range must be positive".into()));
    }
    let mse = test
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / test.len() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Structural similarity with an 11-tap Gaussian window (sigma 1.5),
/// averaged over valid window positions and channels.
pub fn ssim(test: &Array3<f64>, reference: &Array3<f64>, data_range: f64) -> Result<f64> {
    if test.dim() != reference.dim() {
        return Err(Error::Shape("SSIM inputs must share a shape".into()));
    }
    if data_range <= 0.0 {
        return Err(Error::Validation("data_range must be positive".into()));
    }
    let (c, h, w) = test.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut total = 0.0;
    for ci in 0..c {
        let x = test.index_axis(ndarray::Axis(0), ci).to_owned();
        let y = reference.index_axis(ndarray::Axis(0), ci).to_owned();
        let mu_x = blur_valid(&x, &kernel);
        let mu_y = blur_valid(&y, &kernel);
        let xx = blur_valid(&(&x * &x), &kernel);
        let yy = blur_valid(&(&y * &y), &kernel);
        let xy = blur_valid(&(&x * &y), &kernel);
        let mut acc = 0.0;
        for i in 0..mu_x.nrows() {
            for j in 0..mu_x.ncols() {
                let mx = mu_x[[i, j]];
                let my = mu_y[[i, j]];
                let vx = xx[[i, j]] - mx * mx;
                let vy = yy[[i, j]] - my * my;
                let cov = xy[[i, j]] - mx * my;
                let val = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                acc += val;
            }
        }
        total += acc / (mu_x.len()) as f64;
    }
    Ok(total / c as f64)
}

fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let mid = (len / 2) as f64;
    let mut k: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode filtering: rows then columns.
fn blur_valid(x: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let kw = kernel.len();
    let mut rows = Array2::zeros((h, w - kw + 1));
    for i in 0..h {
        for j in 0..w - kw + 1 {
            let mut acc = 0.0;
            for t in 0..kw {
                acc += x[[i, j + t]] * kernel[t];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((h - kw + 1, w - kw + 1));
    for i in 0..h - kw + 1 {
        for j in 0..rows.ncols() {
            let mut acc = 0.0;
            for t in 0..kw {
                acc += rows[[i + t, j]] * kernel[t];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// One metric aggregated over folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn from_folds(folds: Vec<f64>) -> Self {
        let (mean, std) = crate::autoenc::mean_std(&folds);
        MetricSummary { folds, mean, std }
    }
}

/// Classification metrics for one (condition, space) cell across folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub bacc: MetricSummary,
    pub auc: MetricSummary,
    pub mcc: MetricSummary,
}

impl MetricReport {
    pub fn from_fold_evals(evals: &[FoldEval]) -> Result<Self> {
        if evals.is_empty() {
            return Err(Error::Validation("metric report over zero folds".into()));
        }
        Ok(MetricReport {
            bacc: MetricSummary::from_folds(evals.iter().map(|e| e.bacc).collect()),
            auc: MetricSummary::from_folds(evals.iter().map(|e| e.auc).collect()),
            mcc: MetricSummary::from_folds(evals.iter().map(|e| e.mcc).collect()),
        })
    }

    /// CSV rows: metric,fold,value with a trailing mean/std pair per metric.
    pub fn to_csv(&self, mut push_row: impl FnMut(&str, &str, f64)) {
        for (name, summary) in
            [("bacc", &self.bacc), ("auc", &self.auc), ("mcc", &self.mcc)]
        {
            for (fold, v) in summary.folds.iter().enumerate() {
                push_row(name, &fold.to_string(), *v);
            }
            push_row(name, "mean", summary.mean);
            push_row(name, "std", summary.std);
        }
    }
}
