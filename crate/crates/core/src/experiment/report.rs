use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Cell;
use super::runner::RunRecord;
use crate::ctrmodel::ModelMode;
use crate::error::{MletError, Result};

/// Column order of `report.csv`.
pub const CSV_COLUMNS: &[&str] = &[
    "label",
    "mode",
    "d",
    "k",
    "init_std",
    "seeds",
    "auc",
    "pr_auc",
    "logloss",
    "frequent_pr_auc",
    "rare_pr_auc",
    "train_params",
    "inference_embedding_params",
    "inference_embedding_bytes",
    "compressed_auc",
    "compressed_bytes",
];

/// Seed means of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub mode: String,
    pub d: usize,
    pub k: Option<usize>,
    pub init_std: Option<f64>,
    pub seeds: usize,
    pub auc: f64,
    pub pr_auc: f64,
    pub logloss: f64,
    pub frequent_pr_auc: f64,
    pub rare_pr_auc: f64,
    pub train_params: usize,
    pub inference_embedding_params: usize,
    /// At 8 bytes per parameter.
    pub inference_embedding_bytes: usize,
    pub compressed_auc: Option<f64>,
    pub compressed_bytes: Option<f64>,
}

/// PR-AUC change of an MLET configuration over the single-layer run with the
/// same `d`, on the most and least frequent test slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceDelta {
    pub label: String,
    pub baseline: String,
    pub frequent_abs: f64,
    pub rare_abs: f64,
    /// Relative to the baseline's PR-AUC on the slice.
    pub frequent_rel: f64,
    pub rare_rel: f64,
}

/// Smallest MLET `d` whose mean AUC reaches a single-layer baseline's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReduction {
    pub baseline: String,
    pub baseline_d: usize,
    pub baseline_auc: f64,
    pub matched: Option<String>,
    pub matched_d: Option<usize>,
    /// `baseline_d / matched_d`.
    pub factor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub rows: Vec<SummaryRow>,
    pub slice_deltas: Vec<SliceDelta>,
    pub memory_reduction: Vec<MemoryReduction>,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn row(r: &RunRecord) -> SummaryRow {
    let seeds = &r.seeds;
    let (mode, k) = match r.cell.mode {
        ModelMode::SingleLayer => ("single", None),
        ModelMode::Mlet { k } => ("mlet", Some(k)),
    };
    let compressed: Vec<_> = seeds.iter().filter_map(|s| s.compressed).collect();
    let has_compressed = !compressed.is_empty() && compressed.len() == seeds.len();
    SummaryRow {
        label: r.label.clone(),
        mode: mode.to_string(),
        d: r.cell.d,
        k,
        init_std: r.cell.init_std,
        seeds: seeds.len(),
        auc: mean(seeds.iter().map(|s| s.eval.full.auc)),
        pr_auc: mean(seeds.iter().map(|s| s.eval.full.pr_auc)),
        logloss: mean(seeds.iter().map(|s| s.eval.full.logloss)),
        frequent_pr_auc: mean(seeds.iter().map(|s| s.eval.most_frequent.pr_auc)),
        rare_pr_auc: mean(seeds.iter().map(|s| s.eval.least_frequent.pr_auc)),
        train_params: r.train_params,
        inference_embedding_params: r.inference_embedding_params,
        inference_embedding_bytes: 8 * r.inference_embedding_params,
        compressed_auc: has_compressed.then(|| mean(compressed.iter().map(|c| c.eval.full.auc))),
        compressed_bytes: has_compressed
            .then(|| mean(compressed.iter().map(|c| c.bytes_after as f64))),
    }
}

pub fn summarize(records: &[RunRecord]) -> Result<Report> {
    let first = records
        .first()
        .ok_or_else(|| MletError::InvalidArgument("no run records to report".into()))?;
    let mut labels = BTreeSet::new();
    for r in records {
        if r.dataset != first.dataset {
            return Err(MletError::InvalidArgument(format!(
                "runs {} and {} used different datasets",
                first.label, r.label
            )));
        }
        if r.hashed != first.hashed {
            return Err(MletError::InvalidArgument(format!(
                "runs {} and {} hashed their tables differently",
                first.label, r.label
            )));
        }
        if !labels.insert(r.label.clone()) {
            return Err(MletError::InvalidArgument(format!(
                "configuration {} appears twice",
                r.label
            )));
        }
        if r.seeds.is_empty() {
            return Err(MletError::InvalidArgument(format!(
                "run {} has no seeds",
                r.label
            )));
        }
    }
    let rows: Vec<SummaryRow> = records.iter().map(row).collect();
    let is_single = |c: &Cell| c.mode == ModelMode::SingleLayer;
    let baselines: Vec<(&RunRecord, &SummaryRow)> = records
        .iter()
        .zip(&rows)
        .filter(|(r, _)| is_single(&r.cell))
        .collect();
    let mlets: Vec<(&RunRecord, &SummaryRow)> = records
        .iter()
        .zip(&rows)
        .filter(|(r, _)| !is_single(&r.cell))
        .collect();

    let slice_deltas = mlets
        .iter()
        .filter_map(|(r, m)| {
            let (_, b) = baselines.iter().find(|(b, _)| b.cell.d == r.cell.d)?;
            Some(SliceDelta {
                label: m.label.clone(),
                baseline: b.label.clone(),
                frequent_abs: m.frequent_pr_auc - b.frequent_pr_auc,
                rare_abs: m.rare_pr_auc - b.rare_pr_auc,
                frequent_rel: (m.frequent_pr_auc - b.frequent_pr_auc) / b.frequent_pr_auc,
                rare_rel: (m.rare_pr_auc - b.rare_pr_auc) / b.rare_pr_auc,
            })
        })
        .collect();

    let memory_reduction = baselines
        .iter()
        .map(|(_, b)| {
            let best = mlets
                .iter()
                .filter(|(_, m)| m.auc >= b.auc)
                .min_by(|(_, x), (_, y)| x.d.cmp(&y.d).then(y.auc.total_cmp(&x.auc)));
            MemoryReduction {
                baseline: b.label.clone(),
                baseline_d: b.d,
                baseline_auc: b.auc,
                matched: best.map(|(_, m)| m.label.clone()),
                matched_d: best.map(|(_, m)| m.d),
                factor: best.map(|(_, m)| b.d as f64 / m.d as f64),
            }
        })
        .collect();

    Ok(Report {
        dataset: first.dataset.clone(),
        rows,
        slice_deltas,
        memory_reduction,
    })
}

/// Reads `runs/*.json` from each directory, in sorted file order.
pub fn load_records(dirs: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for dir in dirs {
        let runs = dir.join("runs");
        let mut files: Vec<PathBuf> = fs::read_dir(&runs)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        for f in files {
            out.push(serde_json::from_str(&fs::read_to_string(&f)?)?);
        }
    }
    if out.is_empty() {
        return Err(MletError::InvalidArgument("no run records found".into()));
    }
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.label.clone(),
            r.mode.clone(),
            r.d.to_string(),
            opt(r.k),
            opt(r.init_std),
            r.seeds.to_string(),
            r.auc.to_string(),
            r.pr_auc.to_string(),
            r.logloss.to_string(),
            r.frequent_pr_auc.to_string(),
            r.rare_pr_auc.to_string(),
            r.train_params.to_string(),
            r.inference_embedding_params.to_string(),
            r.inference_embedding_bytes.to_string(),
            opt(r.compressed_auc),
            opt(r.compressed_bytes),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.csv` and `report.json` into `out`.
pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_csv(report, &out.join("report.csv"))?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}
