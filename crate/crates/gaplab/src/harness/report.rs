//! The gap report: per-cell metrics, the RS−LS / IS−LS gap table with
//! paired significance tests, reconstruction fidelity, scatter data, the
//! ablation ladder, and throughput rows. Emission is a pure function of the
//! report value — stable field order, `Vec`s everywhere, no maps — so the
//! same report always serializes to the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;
use crate::stats::{holm_adjust, paired_t_test, wilcoxon_signed_rank, Sidedness, TestResult};
use crate::{Error, Result};

use super::config::{ConditionKind, SpaceKind};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Training hit a non-finite loss; the fold is excluded from aggregates.
    Diverged,
}

/// One (condition, space, fold) training result with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCell {
    pub condition: ConditionKind,
    pub space: SpaceKind,
    pub fold: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub bacc: Option<f64>,
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_size: usize,
}

/// Fold-aggregated metrics for one (condition, space) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub condition: ConditionKind,
    pub space: SpaceKind,
    pub folds_used: usize,
    pub metrics: MetricReport,
}

/// Per-condition gap between reconstruction and latent space, paired over
/// the folds where both survived. Gaps are in balanced-accuracy percentage
/// points; positive means the reconstruction classifier wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub condition: ConditionKind,
    pub paired_folds: Vec<usize>,
    pub fold_gap_rs_ls_pp: Vec<f64>,
    pub mean_bacc_ls: Option<f64>,
    pub mean_bacc_rs: Option<f64>,
    pub gap_rs_ls_pp: Option<f64>,
    pub fold_gap_is_ls_pp: Vec<f64>,
    pub mean_bacc_is: Option<f64>,
    pub gap_is_ls_pp: Option<f64>,
    /// Two-sided paired t over the per-fold (LS, RS) pairs; absent with
    /// fewer than two surviving pairs.
    pub t_test: Option<TestResult>,
    pub p_holm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityRow {
    pub condition: ConditionKind,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Max |pixel| deviation of this condition's reconstruction inputs from
    /// the plain-condition ones; exact invertibility keeps this tiny.
    pub rs_input_max_dev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub condition: ConditionKind,
    pub psnr: f64,
    pub gap_bacc_pp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationFoldRow {
    pub fold: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub bacc: Option<f64>,
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub rung: String,
    pub condition: ConditionKind,
    pub distill: bool,
    pub noise_cond: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub folds: Vec<AblationFoldRow>,
    pub folds_used: usize,
    pub mean_bacc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPath {
    Latent,
    Reconstruction,
}

impl std::fmt::Display for BenchPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchPath::Latent => "latent",
            BenchPath::Reconstruction => "reconstruction",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub path: BenchPath,
    pub batch_size: usize,
    pub iterations: usize,
    pub elapsed_secs: f64,
    pub samples_per_sec: f64,
    /// Peak live tensor bytes above the pre-loop baseline, in MiB; absent
    /// when the counting allocator is not installed.
    pub peak_mib: Option<f64>,
}

/// Everything one experiment produces. Wall-clock throughput rows are only
/// filled by the benchmark command; the training pipeline leaves them empty
/// so that identical (config, seed) runs emit identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub fold_count: usize,
    /// Hash of the shared per-fold index sets; equal across spaces by
    /// construction and recorded so consumers can verify it.
    pub fold_hash: String,
    pub incomplete: bool,
    pub cells: Vec<MetricCell>,
    pub summaries: Vec<CellSummary>,
    pub gaps: Vec<GapRow>,
    /// One-sided Wilcoxon (RS > LS) over per-condition mean differences.
    pub overall_wilcoxon: Option<TestResult>,
    pub fidelity: Vec<FidelityRow>,
    pub scatter: Vec<ScatterPoint>,
    pub ablation: Vec<AblationRow>,
    pub throughput: Vec<BenchRow>,
}

/// Gap table plus significance, computed from the per-cell results.
///
/// Cells must cover every fold index below `fold_count` exactly once per
/// (condition, space); anything else means the caller mixed results from
/// different fold assignments. Only conditions that trained both the latent
/// and the reconstruction space get a row.
pub fn compute_gap(
    cells: &[MetricCell],
    fold_count: usize,
) -> Result<(Vec<GapRow>, Option<TestResult>)> {
    let mut conditions: Vec<ConditionKind> = Vec::new();
    for cell in cells {
        if !conditions.contains(&cell.condition) {
            conditions.push(cell.condition);
        }
    }
    conditions.sort();

    for &condition in &conditions {
        for space in [SpaceKind::Image, SpaceKind::Latent, SpaceKind::Reconstruction] {
            let mut seen = vec![false; fold_count];
            let mut any = false;
            for cell in cells.iter().filter(|c| c.condition == condition && c.space == space) {
                any = true;
                if cell.fold >= fold_count || seen[cell.fold] {
                    return Err(Error::Validation(format!(
                        "mismatched folds: {condition}/{space} fold {} out of range or repeated",
                        cell.fold
                    )));
                }
                seen[cell.fold] = true;
            }
            if any && !seen.iter().all(|&s| s) {
                return Err(Error::Validation(format!(
                    "mismatched folds: {condition}/{space} is missing fold entries"
                )));
            }
        }
    }

    let bacc_of = |condition: ConditionKind, space: SpaceKind, fold: usize| -> Option<f64> {
        cells
            .iter()
            .find(|c| c.condition == condition && c.space == space && c.fold == fold)
            .and_then(|c| c.bacc)
    };
    let has_space = |condition: ConditionKind, space: SpaceKind| {
        cells.iter().any(|c| c.condition == condition && c.space == space)
    };

    let mut rows = Vec::new();
    for &condition in &conditions {
        if !(has_space(condition, SpaceKind::Latent) && has_space(condition, SpaceKind::Reconstruction)) {
            continue;
        }
        let mut paired_folds = Vec::new();
        let mut pairs = Vec::new();
        let mut is_gaps = Vec::new();
        let mut is_vals = Vec::new();
        for fold in 0..fold_count {
            let ls = bacc_of(condition, SpaceKind::Latent, fold);
            let rs = bacc_of(condition, SpaceKind::Reconstruction, fold);
            let (Some(ls), Some(rs)) = (ls, rs) else { continue };
            paired_folds.push(fold);
            pairs.push((ls, rs));
            if let Some(is) = bacc_of(condition, SpaceKind::Image, fold) {
                is_gaps.push((is - ls) * 100.0);
                is_vals.push(is);
            }
        }
        let fold_gap_rs_ls_pp: Vec<f64> = pairs.iter().map(|&(ls, rs)| (rs - ls) * 100.0).collect();
        let n = pairs.len();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let (mean_ls, mean_rs, gap) = if n > 0 {
            let ls: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let rs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            (Some(mean(&ls)), Some(mean(&rs)), Some(mean(&fold_gap_rs_ls_pp)))
        } else {
            (None, None, None)
        };
        // Fewer than two surviving pairs leaves nothing to test.
        let t_test = if n >= 2 { Some(paired_t_test(&pairs, Sidedness::TwoSided)?) } else { None };
        let (mean_is, gap_is) = if is_gaps.is_empty() {
            (None, None)
        } else {
            (Some(mean(&is_vals)), Some(mean(&is_gaps)))
        };
        rows.push(GapRow {
            condition,
            paired_folds,
            fold_gap_rs_ls_pp,
            mean_bacc_ls: mean_ls,
            mean_bacc_rs: mean_rs,
            gap_rs_ls_pp: gap,
            fold_gap_is_ls_pp: is_gaps,
            mean_bacc_is: mean_is,
            gap_is_ls_pp: gap_is,
            t_test,
            p_holm: None,
        });
    }

    let raw_p: Vec<f64> = rows.iter().filter_map(|r| r.t_test.as_ref().map(|t| t.p_value)).collect();
    if !raw_p.is_empty() {
        let adjusted = holm_adjust(&raw_p)?;
        let mut it = adjusted.into_iter();
        for row in rows.iter_mut() {
            if row.t_test.is_some() {
                row.p_holm = it.next();
            }
        }
    }

    let mean_pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| match (r.mean_bacc_ls, r.mean_bacc_rs) {
            (Some(ls), Some(rs)) => Some((ls, rs)),
            _ => None,
        })
        .collect();
    // All-zero differences leave the signed-rank statistic undefined (every
    // pair is dropped), so a fully gap-free table simply reports no test.
    let overall = if mean_pairs.is_empty() || mean_pairs.iter().all(|(a, b)| a == b) {
        None
    } else {
        Some(wilcoxon_signed_rank(&mean_pairs, Sidedness::Greater)?)
    };

    Ok((rows, overall))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_cells(cells: &[MetricCell]) -> String {
    let mut out = String::from(
        "condition,space,fold,seed,status,bacc,auc,mcc,best_epoch,epochs_run,val_size\n",
    );
    for c in cells {
        let status = match c.status {
            CellStatus::Ok => "ok",
            CellStatus::Diverged => "diverged",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.condition,
            c.space,
            c.fold,
            c.seed,
            status,
            fmt_opt(c.bacc),
            fmt_opt(c.auc),
            fmt_opt(c.mcc),
            c.best_epoch,
            c.epochs_run,
            c.val_size
        ));
    }
    out
}

fn csv_scatter(points: &[ScatterPoint]) -> String {
    let mut out = String::from("condition,psnr,gap_bacc_pp\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.condition, p.psnr, p.gap_bacc_pp));
    }
    out
}

fn csv_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from("path,batch_size,iterations,elapsed_secs,samples_per_sec,peak_mib\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.path,
            r.batch_size,
            r.iterations,
            r.elapsed_secs,
            r.samples_per_sec,
            fmt_opt(r.peak_mib)
        ));
    }
    out
}

/// Writes throughput rows as `bench.csv` under `dir` (for benchmark runs
/// that have no full report to attach them to).
pub fn write_bench_csv(rows: &[BenchRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("bench.csv"), csv_bench(rows))?;
    Ok(())
}

/// Serializes the report to `report.json`, `report.csv`, `scatter.csv`, and
/// `bench.csv` under `dir`. Partial reports are emitted as-is — the
/// `incomplete` flag travels with them — but an empty report is an error.
pub fn emit_report(report: &GapReport, dir: &Path) -> Result<()> {
    if report.cells.is_empty() {
        return Err(Error::Validation("refusing to emit a report with no cells".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("report.csv"), csv_cells(&report.cells))?;
    std::fs::write(dir.join("scatter.csv"), csv_scatter(&report.scatter))?;
    std::fs::write(dir.join("bench.csv"), csv_bench(&report.throughput))?;
    Ok(())
}
