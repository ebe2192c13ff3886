use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Cell, CompressOptions, DatasetConfig, ExperimentConfig};
use crate::compress::{
    apply_hash, low_rank_approx, quantize_int8, HashedTableSpec, QuantizedTable,
};
use crate::ctrmodel::{
    read_checkpoint, train, write_checkpoint, CtrModel, LossReport, Optimizer, TrainConfig,
};
use crate::embedding::{EmbeddingBundle, DEFAULT_STD_DOT_MODEL};
use crate::error::{MletError, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::synthdata::{stratify, Strata, SyntheticCtrDataset};

/// Environment variable capping the number of concurrently trained cells.
pub const THREADS_ENV: &str = "MLET_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEval {
    pub full: EvalResult,
    pub most_frequent: EvalResult,
    pub least_frequent: EvalResult,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedEval {
    pub eval: SliceEval,
    pub bytes_before: usize,
    pub bytes_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub eval: SliceEval,
    pub train_loss: LossReport,
    pub compressed: Option<CompressedEval>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub dataset: String,
    pub cell: Cell,
    pub optimizer: Optimizer,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub compress: CompressOptions,
    pub hashed: Vec<HashedTableSpec>,
    pub train_params: usize,
    /// `sum_f d * n_f` after collapsing.
    pub inference_embedding_params: usize,
    pub seeds: Vec<SeedResult>,
}

/// Metadata stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label: String,
    pub cell: Cell,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub hashed: Vec<HashedTableSpec>,
    pub stratum_fraction: f64,
}

/// A trained, collapsed model with its bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub meta: CheckpointMeta,
    pub model: CtrModel,
    pub result: SeedResult,
    pub train_params: usize,
}

/// Cell parallelism from [`THREADS_ENV`], defaulting to the core count.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Hashes every field wider than `m` buckets down to `m`.
pub fn hash_dataset(
    ds: &SyntheticCtrDataset,
    m: usize,
) -> Result<(SyntheticCtrDataset, Vec<HashedTableSpec>)> {
    let mut out = ds.clone();
    let mut specs = Vec::new();
    for f in 0..ds.num_fields() {
        if ds.cardinalities()[f] > m {
            let (next, spec) = apply_hash(&out, f, m)?;
            out = next;
            specs.push(spec);
        }
    }
    Ok((out, specs))
}

fn reapply_hash(
    ds: &SyntheticCtrDataset,
    specs: &[HashedTableSpec],
) -> Result<SyntheticCtrDataset> {
    let mut out = ds.clone();
    for s in specs {
        out = apply_hash(&out, s.field, s.buckets)?.0;
    }
    Ok(out)
}

pub fn evaluate_slices(
    model: &CtrModel,
    ds: &SyntheticCtrDataset,
    strata: &Strata,
) -> Result<SliceEval> {
    let test = ds.test_range();
    let base = test.start;
    let scores = model.predict(ds, test.clone())?;
    let labels = &ds.labels()[test];
    let slice = |idx: &[usize]| -> Result<EvalResult> {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i - base]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i - base]).collect();
        evaluate(&s, &l)
    };
    Ok(SliceEval {
        full: evaluate(&scores, labels)?,
        most_frequent: slice(&strata.most_frequent)?,
        least_frequent: slice(&strata.least_frequent)?,
    })
}

/// Bytes of the checkpoint that would hold `model` (and `quantized`).
pub fn checkpoint_bytes(
    model: &CtrModel,
    meta: &CheckpointMeta,
    quantized: Option<&[QuantizedTable]>,
) -> Result<usize> {
    write_checkpoint(
        std::io::sink(),
        model,
        &serde_json::to_value(meta)?,
        quantized,
    )
}

/// Applies the post-training options to a collapsed model. SVD keeps each
/// table as its two rank-`r` factors.
pub fn compress_model(
    model: &CtrModel,
    opts: &CompressOptions,
) -> Result<(CtrModel, Option<Vec<QuantizedTable>>)> {
    opts.validate()?;
    if model.bundles().iter().any(EmbeddingBundle::is_mlet) {
        return Err(MletError::InvalidArgument(
            "compress a collapsed model".into(),
        ));
    }
    let tables: Vec<_> = model
        .bundles()
        .iter()
        .map(|b| b.table())
        .collect::<Result<_>>()?;
    let dense = model.dense_weights().cloned();
    let top = model.top_weights().to_vec();
    if let Some(r) = opts.svd_rank {
        let bundles = tables
            .iter()
            .map(|t| {
                if r > t.rows().min(t.cols()) {
                    return Err(MletError::InvalidArgument(format!(
                        "SVD rank {r} exceeds min(d, n) = {} of a {}x{} table",
                        t.rows().min(t.cols()),
                        t.rows(),
                        t.cols()
                    )));
                }
                let lr = low_rank_approx(t, r)?;
                Ok(EmbeddingBundle::Mlet {
                    w1: lr.left,
                    w2: lr.right,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((CtrModel::from_parts(bundles, dense, top)?, None));
    }
    if opts.int8 {
        let q: Vec<QuantizedTable> = tables.iter().map(quantize_int8).collect::<Result<_>>()?;
        let bundles = q
            .iter()
            .map(|q| EmbeddingBundle::SingleLayer { w: q.dequantize() })
            .collect();
        return Ok((CtrModel::from_parts(bundles, dense, top)?, Some(q)));
    }
    Ok((model.clone(), None))
}

/// Dataset after any pre-training hashing, with the strata of the unhashed
/// data (hashing keeps sample order).
pub fn prepare_dataset(
    cfg: &ExperimentConfig,
) -> Result<(SyntheticCtrDataset, Vec<HashedTableSpec>, Strata)> {
    let ds = cfg.dataset.load()?;
    let strata = stratify(&ds, cfg.stratum_fraction)?;
    let (ds, hashed) = match cfg.compress.hash {
        Some(m) => hash_dataset(&ds, m)?,
        None => (ds, Vec::new()),
    };
    Ok((ds, hashed, strata))
}

/// Trains, collapses and evaluates one cell for one seed.
pub fn run_one(
    cfg: &ExperimentConfig,
    ds: &SyntheticCtrDataset,
    hashed: &[HashedTableSpec],
    strata: &Strata,
    cell: Cell,
    seed: u64,
) -> Result<TrainedRun> {
    let start = Instant::now();
    let tc = cfg.train_config(seed, cell.init_std.unwrap_or(DEFAULT_STD_DOT_MODEL));
    let mut model = CtrModel::new(
        cell.mode,
        cell.d,
        ds.cardinalities(),
        ds.dense_dim(),
        &tc.init,
    )?;
    let train_params = model.param_count();
    let train_loss = train(&mut model, ds, &tc)?;
    let model = model.collapse()?;
    let eval = evaluate_slices(&model, ds, strata)?;
    let meta = CheckpointMeta {
        label: cell.label(),
        cell,
        train: tc,
        dataset: cfg.dataset.clone(),
        hashed: hashed.to_vec(),
        stratum_fraction: cfg.stratum_fraction,
    };
    let compressed = if cfg.compress.post_training() {
        let (small, q) = compress_model(&model, &cfg.compress)?;
        Some(CompressedEval {
            eval: evaluate_slices(&small, ds, strata)?,
            bytes_before: checkpoint_bytes(&model, &meta, None)?,
            bytes_after: checkpoint_bytes(&small, &meta, q.as_deref())?,
        })
    } else {
        None
    };
    Ok(TrainedRun {
        meta,
        model,
        result: SeedResult {
            seed,
            eval,
            train_loss,
            compressed,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        train_params,
    })
}

/// Runs every (cell, seed) pair on up to `threads` threads. Records come
/// back in cell order with seeds in config order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: usize,
) -> Result<(Vec<RunRecord>, Vec<TrainedRun>)> {
    cfg.validate()?;
    let (ds, hashed, strata) = prepare_dataset(cfg)?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, Cell, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| cfg.seeds.iter().map(move |&s| (i, c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| MletError::InvalidArgument(format!("thread pool: {e}")))?;
    let mut runs: Vec<(usize, usize, TrainedRun)> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(j, &(i, cell, seed))| {
                run_one(cfg, &ds, &hashed, &strata, cell, seed).map(|r| (i, j, r))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    runs.sort_by_key(|(i, j, _)| (*i, *j));
    let dataset = cfg.dataset.describe();
    let records = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let mine: Vec<&TrainedRun> = runs
                .iter()
                .filter(|(c, _, _)| *c == i)
                .map(|(_, _, r)| r)
                .collect();
            let first = mine[0];
            RunRecord {
                label: cell.label(),
                dataset: dataset.clone(),
                cell: *cell,
                optimizer: first.meta.train.optimizer,
                eta: first.meta.train.eta,
                batch_size: first.meta.train.batch_size,
                epochs: first.meta.train.epochs,
                compress: cfg.compress,
                hashed: hashed.clone(),
                train_params: first.train_params,
                inference_embedding_params: first.model.inference_embedding_params(),
                seeds: mine.iter().map(|r| r.result.clone()).collect(),
            }
        })
        .collect();
    Ok((records, runs.into_iter().map(|(_, _, r)| r).collect()))
}

pub fn checkpoint_path(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{label}-seed{seed}.bin"))
}

/// Runs the experiment and writes `config.json`, `runs/<label>.json` and
/// `checkpoints/<label>-seed<s>.bin` under `cfg.out`.
pub fn run_and_persist(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>> {
    let (records, runs) = run_experiment(cfg, threads)?;
    let out = &cfg.out;
    fs::create_dir_all(out.join("runs"))?;
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    for r in &records {
        fs::write(
            out.join("runs").join(format!("{}.json", r.label)),
            serde_json::to_string_pretty(r)?,
        )?;
    }
    for run in &runs {
        let path = checkpoint_path(out, &run.meta.label, run.result.seed);
        let w = BufWriter::new(File::create(path)?);
        write_checkpoint(w, &run.model, &serde_json::to_value(&run.meta)?, None)?;
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressReport {
    pub label: String,
    pub seed: u64,
    pub options: CompressOptions,
    pub before: SliceEval,
    pub after: SliceEval,
    pub bytes_before: usize,
    pub bytes_after: usize,
    pub hashed: Vec<HashedTableSpec>,
}

/// Compresses a checkpoint written by [`run_and_persist`]. Hashing changes
/// the training data, so `opts.hash` retrains the model from the stored
/// configuration before the table encodings are applied.
pub fn compress_checkpoint(
    path: &Path,
    opts: &CompressOptions,
    out: &Path,
) -> Result<CompressReport> {
    opts.validate()?;
    if opts.is_empty() {
        return Err(MletError::InvalidArgument(
            "nothing to do: pass --svd-rank, --int8 and/or --hash".into(),
        ));
    }
    let bytes_before = fs::metadata(path)?.len() as usize;
    let ckpt = read_checkpoint(std::io::BufReader::new(File::open(path)?))?;
    if ckpt.quantized.is_some() {
        return Err(MletError::InvalidArgument(
            "checkpoint is already quantized".into(),
        ));
    }
    let meta: CheckpointMeta = serde_json::from_value(ckpt.meta)?;
    let raw = meta.dataset.load()?;
    let strata = stratify(&raw, meta.stratum_fraction)?;
    let ds = reapply_hash(&raw, &meta.hashed)?;
    let before = evaluate_slices(&ckpt.model, &ds, &strata)?;

    let (model, ds, meta) = match opts.hash {
        Some(m) => {
            let (hashed_ds, extra) = hash_dataset(&ds, m)?;
            if extra.is_empty() {
                return Err(MletError::InvalidArgument(format!(
                    "--hash {m} does not shrink any table (widths {:?})",
                    ds.cardinalities()
                )));
            }
            let mut model = CtrModel::new(
                meta.cell.mode,
                meta.cell.d,
                hashed_ds.cardinalities(),
                hashed_ds.dense_dim(),
                &meta.train.init,
            )?;
            train(&mut model, &hashed_ds, &meta.train)?;
            let mut hashed = meta.hashed.clone();
            hashed.extend(extra);
            let meta = CheckpointMeta { hashed, ..meta };
            (model.collapse()?, hashed_ds, meta)
        }
        None => (ckpt.model, ds, meta),
    };
    let table_opts = CompressOptions {
        hash: None,
        ..*opts
    };
    let (small, q) = compress_model(&model, &table_opts)?;
    let after = evaluate_slices(&small, &ds, &strata)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let w = BufWriter::new(File::create(out)?);
    let bytes_after = write_checkpoint(w, &small, &serde_json::to_value(&meta)?, q.as_deref())?;
    Ok(CompressReport {
        label: meta.label.clone(),
        seed: meta.train.seed,
        options: *opts,
        before,
        after,
        bytes_before,
        bytes_after,
        hashed: meta.hashed,
    })
}
