use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctrmodel::{
    ModelMode, Optimizer, TrainConfig, ADAGRAD_EPSILON, ADAGRAD_LEARNING_RATE, DEFAULT_BATCH_SIZE,
    SGD_LEARNING_RATE,
};
use crate::embedding::{InitSpec, DEFAULT_STD_DOT_MODEL};
use crate::error::{MletError, Result};
use crate::synthdata::{generate, SyntheticCtrDataset, SyntheticSpec};

/// Either a dataset file or a synthetic spec generated on the fly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub spec: SyntheticSpec,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            spec: SyntheticSpec::default(),
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<SyntheticCtrDataset> {
        match &self.path {
            Some(p) => SyntheticCtrDataset::load(p),
            None => generate(&self.spec, self.seed),
        }
    }

    /// Identifies the data a run was trained and evaluated on.
    pub fn describe(&self) -> String {
        match &self.path {
            Some(p) => format!("file:{}", p.display()),
            None => format!(
                "synthetic:seed={}:{}",
                self.seed,
                serde_json::to_string(&self.spec).expect("spec serializes")
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Single,
    Mlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

/// Post-training and pre-training compression applied to every run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressOptions {
    /// Truncated-SVD rank of every collapsed table.
    pub svd_rank: Option<usize>,
    /// Symmetric int8 quantization of every collapsed table.
    pub int8: bool,
    /// Hash every field wider than this many buckets before training.
    pub hash: Option<usize>,
}

impl CompressOptions {
    pub fn validate(&self) -> Result<()> {
        if self.svd_rank.is_some() && self.int8 {
            return Err(MletError::InvalidArgument(
                "--svd-rank and --int8 are alternative table encodings; pick one".into(),
            ));
        }
        if self.svd_rank == Some(0) {
            return Err(MletError::InvalidArgument(
                "SVD rank must be at least 1".into(),
            ));
        }
        if self.hash == Some(0) {
            return Err(MletError::InvalidArgument(
                "bucket count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn post_training(&self) -> bool {
        self.svd_rank.is_some() || self.int8
    }

    pub fn is_empty(&self) -> bool {
        !self.post_training() && self.hash.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub mode: ModeKind,
    pub d: Vec<usize>,
    /// Inner dimensions swept in MLET mode.
    pub k: Vec<usize>,
    /// Projection-layer init stds swept in MLET mode.
    pub init_std: Vec<f64>,
    pub optimizer: OptimizerKind,
    /// Defaults to the optimizer's standard rate.
    pub eta: Option<f64>,
    pub adagrad_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub stratum_fraction: f64,
    pub compress: CompressOptions,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            mode: ModeKind::Mlet,
            d: vec![8],
            k: vec![32],
            init_std: vec![DEFAULT_STD_DOT_MODEL],
            optimizer: OptimizerKind::Sgd,
            eta: None,
            adagrad_epsilon: ADAGRAD_EPSILON,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 1,
            seeds: vec![1, 2, 3],
            stratum_fraction: 0.10,
            compress: CompressOptions::default(),
            out: PathBuf::from("mlet-out"),
        }
    }
}

/// One trained configuration, run once per seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: ModelMode,
    pub d: usize,
    /// `None` for single-layer runs, which have no projection layer.
    pub init_std: Option<f64>,
}

impl Cell {
    pub fn label(&self) -> String {
        match (self.mode, self.init_std) {
            (ModelMode::Mlet { k }, Some(std)) => format!("mlet-d{}-k{k}-std{std}", self.d),
            (ModelMode::Mlet { k }, None) => format!("mlet-d{}-k{k}", self.d),
            (ModelMode::SingleLayer, _) => format!("single-d{}", self.d),
        }
    }

    pub fn is_mlet(&self) -> bool {
        matches!(self.mode, ModelMode::Mlet { .. })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d.is_empty() || self.d.contains(&0) {
            return Err(MletError::InvalidArgument(
                "need at least one positive d".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(MletError::InvalidArgument("need at least one seed".into()));
        }
        if self.mode == ModeKind::Mlet {
            if self.k.is_empty() || self.k.contains(&0) {
                return Err(MletError::InvalidArgument(
                    "MLET mode needs positive k values".into(),
                ));
            }
            if self.init_std.is_empty()
                || self.init_std.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            {
                return Err(MletError::InvalidArgument(
                    "init stds must be positive".into(),
                ));
            }
        }
        if !(self.stratum_fraction > 0.0 && self.stratum_fraction <= 0.5) {
            return Err(MletError::InvalidArgument(
                "stratum fraction must be in (0, 0.5]".into(),
            ));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(MletError::InvalidArgument("seeds must be distinct".into()));
        }
        self.compress.validate()?;
        self.train_config(1, 1.0).validate()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.d {
            match self.mode {
                ModeKind::Single => out.push(Cell {
                    mode: ModelMode::SingleLayer,
                    d,
                    init_std: None,
                }),
                ModeKind::Mlet => {
                    for &k in &self.k {
                        for &std in &self.init_std {
                            out.push(Cell {
                                mode: ModelMode::Mlet { k },
                                d,
                                init_std: Some(std),
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn train_config(&self, seed: u64, init_std: f64) -> TrainConfig {
        let (optimizer, default_eta) = match self.optimizer {
            OptimizerKind::Sgd => (Optimizer::Sgd, SGD_LEARNING_RATE),
            OptimizerKind::Adagrad => (
                Optimizer::Adagrad {
                    epsilon: self.adagrad_epsilon,
                },
                ADAGRAD_LEARNING_RATE,
            ),
        };
        TrainConfig {
            eta: self.eta.unwrap_or(default_eta),
            optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            init: InitSpec::new(init_std, seed),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
