use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CtrModel, LayerGrad, LossReport, Optimizer, TrainConfig};
use crate::embedding::{mix_seed, EmbeddingBundle};
use crate::error::{MletError, Result};
use crate::gradflow::SparseGradient;
use crate::linalg::Matrix;
use crate::synthdata::{Sample, SyntheticCtrDataset};

const STREAM_SHUFFLE: u64 = 0x5_4F1E;

/// Per-parameter Adagrad accumulators, laid out like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    tables: Vec<Vec<Matrix>>,
    dense: Option<Matrix>,
    top: Vec<f64>,
}

impl OptimizerState {
    fn zeros_like(model: &CtrModel) -> Self {
        let tables = model
            .bundles()
            .iter()
            .map(|b| match b {
                EmbeddingBundle::SingleLayer { w } => vec![Matrix::zeros(w.rows(), w.cols())],
                EmbeddingBundle::Mlet { w1, w2 } => vec![
                    Matrix::zeros(w1.rows(), w1.cols()),
                    Matrix::zeros(w2.rows(), w2.cols()),
                ],
            })
            .collect();
        Self {
            tables,
            dense: model
                .dense_weights()
                .map(|m| Matrix::zeros(m.rows(), m.cols())),
            top: vec![0.0; model.top_weights().len()],
        }
    }

    /// Accumulators in the order of [`CtrModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .tables
            .iter()
            .flatten()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect();
        if let Some(d) = &self.dense {
            out.extend_from_slice(d.as_slice());
        }
        out.extend_from_slice(&self.top);
        out
    }
}

#[derive(Clone, Copy)]
struct Rule {
    eta: f64,
    epsilon: Option<f64>,
}

impl Rule {
    #[inline]
    fn apply(self, param: &mut f64, acc: &mut f64, g: f64) {
        match self.epsilon {
            None => *param -= self.eta * g,
            Some(eps) => {
                *acc += g * g;
                *param -= self.eta * g / (*acc + eps).sqrt();
            }
        }
    }
}

fn apply_sparse(w: &mut Matrix, acc: &mut Matrix, g: &SparseGradient, rule: Rule) {
    let cols = w.cols();
    let (ws, acs) = (w.as_mut_slice(), acc.as_mut_slice());
    for (j, col) in g.iter() {
        for (i, &gi) in col.iter().enumerate() {
            rule.apply(&mut ws[i * cols + j], &mut acs[i * cols + j], gi);
        }
    }
}

fn apply_dense(w: &mut [f64], acc: &mut [f64], g: &[f64], rule: Rule) {
    for ((p, a), &gi) in w.iter_mut().zip(acc.iter_mut()).zip(g) {
        rule.apply(p, a, gi);
    }
}

/// Owns the optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    state: OptimizerState,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: &CtrModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::zeros_like(model),
            epoch: 0,
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn rule(&self) -> Rule {
        Rule {
            eta: self.config.eta,
            epsilon: match self.config.optimizer {
                Optimizer::Sgd => None,
                Optimizer::Adagrad { epsilon } => Some(epsilon),
            },
        }
    }

    /// One optimizer step on a batch; returns the batch loss before the step.
    pub fn step(&mut self, model: &mut CtrModel, batch: &[Sample]) -> Result<f64> {
        let grads = model.backward(batch)?;
        let layers = model.layer_gradients(&grads);
        let rule = self.rule();
        let (bundles, dense, top) = model.parts_mut();
        for ((bundle, lg), acc) in bundles.iter_mut().zip(&layers).zip(&mut self.state.tables) {
            match (bundle, lg) {
                (EmbeddingBundle::SingleLayer { w }, LayerGrad::SingleLayer { w: g }) => {
                    apply_sparse(w, &mut acc[0], g, rule)
                }
                (EmbeddingBundle::Mlet { w1, w2 }, LayerGrad::Mlet { w1: g1, w2: g2 }) => {
                    let (a1, a2) = acc.split_at_mut(1);
                    apply_dense(w1.as_mut_slice(), a1[0].as_mut_slice(), g1.as_slice(), rule);
                    apply_sparse(w2, &mut a2[0], g2, rule);
                }
                _ => unreachable!("layer gradient mirrors bundle"),
            }
        }
        if let (Some(dw), Some(dg), Some(acc)) = (dense, &grads.dense, &mut self.state.dense) {
            apply_dense(dw.as_mut_slice(), acc.as_mut_slice(), dg.as_slice(), rule);
        }
        apply_dense(top, &mut self.state.top, &grads.top, rule);
        Ok(grads.loss)
    }

    /// One pass over `range` in a seed-determined order.
    pub fn run_epoch(
        &mut self,
        model: &mut CtrModel,
        ds: &SyntheticCtrDataset,
        range: Range<usize>,
    ) -> Result<LossReport> {
        if range.is_empty() {
            return Err(MletError::InvalidArgument("training range is empty".into()));
        }
        let mut order: Vec<usize> = range.collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            self.config.seed,
            STREAM_SHUFFLE + self.epoch as u64,
        ));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut last_batch = 0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| ds.sample(i)).collect();
            let loss = self.step(model, &batch)?;
            if !loss.is_finite() {
                return Err(MletError::Divergence {
                    epoch: self.epoch,
                    batch: b,
                    loss,
                    max_abs_param: model.max_abs_param(),
                });
            }
            total += loss * batch.len() as f64;
            last_batch = b;
        }
        let max_abs = model.max_abs_param();
        if !max_abs.is_finite() {
            return Err(MletError::Divergence {
                epoch: self.epoch,
                batch: last_batch,
                loss: f64::NAN,
                max_abs_param: max_abs,
            });
        }
        self.epoch += 1;
        Ok(LossReport {
            logloss: total / order.len() as f64,
            sample_count: order.len(),
        })
    }
}

/// A single epoch with fresh optimizer state.
pub fn train_epoch(
    model: &mut CtrModel,
    ds: &SyntheticCtrDataset,
    range: Range<usize>,
    config: &TrainConfig,
) -> Result<LossReport> {
    Trainer::new(model, *config)?.run_epoch(model, ds, range)
}

/// `config.epochs` passes over the training split; returns the last epoch's
/// report.
pub fn train(
    model: &mut CtrModel,
    ds: &SyntheticCtrDataset,
    config: &TrainConfig,
) -> Result<LossReport> {
    let mut trainer = Trainer::new(model, *config)?;
    let mut report = None;
    for _ in 0..config.epochs {
        report = Some(trainer.run_epoch(model, ds, ds.train_range())?);
    }
    Ok(report.expect("at least one epoch"))
}
