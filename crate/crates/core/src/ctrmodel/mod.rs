//! Minimal click-through-rate model: one embedding table per sparse field,
//! a dense-feature projection into the embedding space, pairwise dot-product
//! interactions and a linear logistic head. Gradients are derived by hand.
//!
//! Interaction terms: with dense features the `F + 1` vectors (fields plus
//! projected dense vector) form `F (F + 1) / 2` distinct pairs; without them
//! the `F` field vectors form the same number of pairs when self-pairs are
//! included.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use train::{train, train_epoch, OptimizerState, Trainer};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{init_mlet, init_single, EmbeddingBundle, InitSpec};
use crate::error::{MletError, Result};
use crate::gradflow::SparseGradient;
use crate::linalg::Matrix;
use crate::synthdata::{Sample, SyntheticCtrDataset};

pub const SGD_LEARNING_RATE: f64 = 0.2;
pub const ADAGRAD_LEARNING_RATE: f64 = 0.02;
pub const ADAGRAD_EPSILON: f64 = 1e-10;
pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMode {
    SingleLayer,
    Mlet { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adagrad { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitSpec,
}

impl TrainConfig {
    /// SGD at the default rate, one epoch, default batch size.
    pub fn new(seed: u64, init: InitSpec) -> Self {
        Self {
            eta: SGD_LEARNING_RATE,
            optimizer: Optimizer::Sgd,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 1,
            seed,
            init,
        }
    }

    /// Adagrad at its default rate.
    pub fn adagrad(seed: u64, init: InitSpec) -> Self {
        Self {
            eta: ADAGRAD_LEARNING_RATE,
            optimizer: Optimizer::Adagrad {
                epsilon: ADAGRAD_EPSILON,
            },
            ..Self::new(seed, init)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(MletError::InvalidArgument(format!(
                "learning rate {} must be >= 0",
                self.eta
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(MletError::InvalidArgument(
                "batch size and epochs must be positive".into(),
            ));
        }
        if let Optimizer::Adagrad { epsilon } = self.optimizer {
            if epsilon.is_nan() || epsilon <= 0.0 {
                return Err(MletError::InvalidArgument(
                    "Adagrad epsilon must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub logloss: f64,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtrModel {
    mode: ModelMode,
    d: usize,
    bundles: Vec<EmbeddingBundle>,
    /// `d x dense_dim`; absent without dense features.
    dense_weights: Option<Matrix>,
    /// One weight per interaction term, then the bias.
    top_weights: Vec<f64>,
}

/// Exact gradients of the mean LogLoss of a batch.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Gradient with respect to each field's effective `d x n` table.
    pub embeddings: Vec<SparseGradient>,
    pub dense: Option<Matrix>,
    pub top: Vec<f64>,
    /// Mean LogLoss of the batch at the current parameters.
    pub loss: f64,
}

/// Gradient of one bundle's trainable layers.
#[derive(Clone, Debug)]
pub enum LayerGrad {
    SingleLayer {
        w: SparseGradient,
    },
    /// `w1` is dense `d x k`; `w2` touches only the queried columns.
    Mlet {
        w1: Matrix,
        w2: SparseGradient,
    },
}

/// Index pairs `(a, b)` of the interaction terms; index `fields` is the
/// projected dense vector.
pub fn interaction_pairs(fields: usize, has_dense: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if has_dense {
        for a in 0..=fields {
            for b in a + 1..=fields {
                out.push((a, b));
            }
        }
    } else {
        for a in 0..fields {
            for b in a..fields {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z) - y z`, the LogLoss of logit `z`.
fn logit_loss(z: f64, y: u8) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y as f64 * z
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn xavier_vec(len: usize, fan_in: usize, fan_out: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

const STREAM_DENSE: u64 = 0xD3;
const STREAM_TOP: u64 = 0x70;

impl CtrModel {
    /// Bundle `f` is initialized from `init.derive(f + 1)`; dense and top
    /// weights are Xavier-uniform, the bias starts at zero.
    pub fn new(
        mode: ModelMode,
        d: usize,
        cardinalities: &[usize],
        dense_dim: usize,
        init: &InitSpec,
    ) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(MletError::InvalidArgument(
                "model needs at least one field".into(),
            ));
        }
        let bundles = cardinalities
            .iter()
            .enumerate()
            .map(|(f, &n)| {
                let spec = init.derive(f as u64 + 1);
                match mode {
                    ModelMode::SingleLayer => init_single(d, n, &spec),
                    ModelMode::Mlet { k } => init_mlet(d, n, k, &spec),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let dense_weights = (dense_dim > 0).then(|| {
            let v = xavier_vec(d * dense_dim, dense_dim, d, init.derive(STREAM_DENSE).seed);
            Matrix::new(d, dense_dim, v).expect("finite init")
        });
        let terms = interaction_pairs(cardinalities.len(), dense_dim > 0).len();
        let mut top_weights = xavier_vec(terms, terms, 1, init.derive(STREAM_TOP).seed);
        top_weights.push(0.0);
        Ok(Self {
            mode,
            d,
            bundles,
            dense_weights,
            top_weights,
        })
    }

    /// Assembles a model from parts, checking shapes.
    pub fn from_parts(
        bundles: Vec<EmbeddingBundle>,
        dense_weights: Option<Matrix>,
        top_weights: Vec<f64>,
    ) -> Result<Self> {
        let first = bundles
            .first()
            .ok_or_else(|| MletError::InvalidArgument("model needs at least one field".into()))?;
        let d = first.d();
        let mode = match first.k() {
            Some(k) => ModelMode::Mlet { k },
            None => ModelMode::SingleLayer,
        };
        for b in &bundles {
            if b.d() != d {
                return Err(MletError::InvalidDimensions("bundles disagree on d".into()));
            }
            if b.k() != first.k() {
                return Err(MletError::InvalidDimensions(
                    "bundles mix factorization modes".into(),
                ));
            }
        }
        if let Some(dw) = &dense_weights {
            if dw.rows() != d {
                return Err(MletError::InvalidDimensions(
                    "dense weights must have d rows".into(),
                ));
            }
        }
        let terms = interaction_pairs(bundles.len(), dense_weights.is_some()).len();
        if top_weights.len() != terms + 1 {
            return Err(MletError::InvalidDimensions(format!(
                "expected {} top weights, got {}",
                terms + 1,
                top_weights.len()
            )));
        }
        if top_weights.iter().any(|w| !w.is_finite()) {
            return Err(MletError::NonFinite("top weights"));
        }
        Ok(Self {
            mode,
            d,
            bundles,
            dense_weights,
            top_weights,
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_fields(&self) -> usize {
        self.bundles.len()
    }

    pub fn dense_dim(&self) -> usize {
        self.dense_weights.as_ref().map_or(0, Matrix::cols)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.bundles.iter().map(EmbeddingBundle::n).collect()
    }

    pub fn bundles(&self) -> &[EmbeddingBundle] {
        &self.bundles
    }

    pub fn dense_weights(&self) -> Option<&Matrix> {
        self.dense_weights.as_ref()
    }

    pub fn top_weights(&self) -> &[f64] {
        &self.top_weights
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        interaction_pairs(self.num_fields(), self.dense_weights.is_some())
    }

    /// Trainable parameters.
    pub fn param_count(&self) -> usize {
        self.bundles
            .iter()
            .map(EmbeddingBundle::param_count)
            .sum::<usize>()
            + self
                .dense_weights
                .as_ref()
                .map_or(0, |m| m.rows() * m.cols())
            + self.top_weights.len()
    }

    /// Embedding parameters after collapsing, `sum_f d * n_f`.
    pub fn inference_embedding_params(&self) -> usize {
        self.bundles
            .iter()
            .map(EmbeddingBundle::inference_param_count)
            .sum()
    }

    /// Replaces every factorized table by its product.
    pub fn collapse(&self) -> Result<CtrModel> {
        let bundles = self
            .bundles
            .iter()
            .map(|b| b.collapse().map(|c| c.bundle))
            .collect::<Result<Vec<_>>>()?;
        Ok(CtrModel {
            mode: ModelMode::SingleLayer,
            bundles,
            ..self.clone()
        })
    }

    /// Largest absolute parameter value.
    pub fn max_abs_param(&self) -> f64 {
        let mut m = self.bundles.iter().fold(0.0f64, |m, b| m.max(b.max_abs()));
        if let Some(dw) = &self.dense_weights {
            m = m.max(dw.max_abs());
        }
        self.top_weights.iter().fold(m, |m, w| m.max(w.abs()))
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.sparse.len() != self.num_fields() {
            return Err(MletError::InvalidArgument(format!(
                "sample has {} sparse indices, model has {} fields",
                s.sparse.len(),
                self.num_fields()
            )));
        }
        if s.dense.len() != self.dense_dim() {
            return Err(MletError::InvalidArgument(format!(
                "sample has {} dense features, model expects {}",
                s.dense.len(),
                self.dense_dim()
            )));
        }
        for (b, &c) in self.bundles.iter().zip(s.sparse) {
            if c as usize >= b.n() {
                return Err(MletError::IndexOutOfRange {
                    index: c as usize,
                    n: b.n(),
                });
            }
        }
        Ok(())
    }

    /// Embedding vectors of a sample, followed by the projected dense vector.
    fn vectors(&self, s: &Sample, out: &mut [Vec<f64>]) -> Result<()> {
        self.check_sample(s)?;
        for ((b, &c), v) in self.bundles.iter().zip(s.sparse).zip(out.iter_mut()) {
            b.lookup_into(c as usize, v)?;
        }
        if let Some(dw) = &self.dense_weights {
            let p = &mut out[self.num_fields()];
            for (r, p) in p.iter_mut().enumerate() {
                *p = dw
                    .row(r)
                    .iter()
                    .zip(s.dense)
                    .map(|(w, &x)| w * x as f64)
                    .sum();
            }
        }
        Ok(())
    }

    fn vector_buffers(&self) -> Vec<Vec<f64>> {
        let count = self.num_fields() + usize::from(self.dense_weights.is_some());
        vec![vec![0.0; self.d]; count]
    }

    fn logit_of(&self, vectors: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        let bias = *self.top_weights.last().unwrap();
        pairs
            .iter()
            .zip(&self.top_weights)
            .map(|(&(a, b), w)| w * dot(&vectors[a], &vectors[b]))
            .sum::<f64>()
            + bias
    }

    pub fn logits(&self, batch: &[Sample]) -> Result<Vec<f64>> {
        let pairs = self.pairs();
        let mut vectors = self.vector_buffers();
        batch
            .iter()
            .map(|s| {
                self.vectors(s, &mut vectors)?;
                Ok(self.logit_of(&vectors, &pairs))
            })
            .collect()
    }

    /// Click probabilities.
    pub fn forward(&self, batch: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.logits(batch)?.into_iter().map(sigmoid).collect())
    }

    /// Mean LogLoss of a batch.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(MletError::InvalidArgument("empty batch".into()));
        }
        let z = self.logits(batch)?;
        Ok(z.iter()
            .zip(batch)
            .map(|(&z, s)| logit_loss(z, s.label))
            .sum::<f64>()
            / batch.len() as f64)
    }

    /// Probabilities for a dataset range, computed in parallel shards.
    pub fn predict(
        &self,
        ds: &SyntheticCtrDataset,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<f64>> {
        let idx: Vec<usize> = range.collect();
        let shards: Vec<Vec<f64>> = idx
            .par_chunks(4096)
            .map(|chunk| {
                let batch: Vec<Sample> = chunk.iter().map(|&i| ds.sample(i)).collect();
                self.forward(&batch)
            })
            .collect::<Result<_>>()?;
        Ok(shards.concat())
    }

    pub fn backward(&self, batch: &[Sample]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(MletError::InvalidArgument("empty batch".into()));
        }
        if let Some(s) = batch.iter().find(|s| s.label > 1) {
            return Err(MletError::InvalidArgument(format!(
                "label {} is not 0 or 1",
                s.label
            )));
        }
        let pairs = self.pairs();
        let f_count = self.num_fields();
        let mut embeddings: Vec<SparseGradient> = self
            .bundles
            .iter()
            .map(|b| SparseGradient::new(self.d, b.n()))
            .collect();
        let mut dense = self
            .dense_weights
            .as_ref()
            .map(|dw| Matrix::zeros(dw.rows(), dw.cols()));
        let mut top = vec![0.0; self.top_weights.len()];
        let bias_slot = top.len() - 1;
        let mut vectors = self.vector_buffers();
        let mut vgrads = self.vector_buffers();
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.vectors(s, &mut vectors)?;
            let z = self.logit_of(&vectors, &pairs);
            loss += logit_loss(z, s.label);
            let dl = (sigmoid(z) - s.label as f64) * inv_b;
            for g in vgrads.iter_mut() {
                g.fill(0.0);
            }
            for (t, &(a, b)) in pairs.iter().enumerate() {
                top[t] += dl * dot(&vectors[a], &vectors[b]);
                let w = dl * self.top_weights[t];
                for r in 0..self.d {
                    let (va, vb) = (vectors[a][r], vectors[b][r]);
                    vgrads[a][r] += w * vb;
                    vgrads[b][r] += w * va;
                }
            }
            top[bias_slot] += dl;
            for (f, &c) in s.sparse.iter().enumerate() {
                embeddings[f].add(c as usize, &vgrads[f])?;
            }
            if let Some(dg) = dense.as_mut() {
                let gp = &vgrads[f_count];
                for (r, &g) in gp.iter().enumerate() {
                    for (o, &x) in dg.row_mut(r).iter_mut().zip(s.dense) {
                        *o += g * x as f64;
                    }
                }
            }
        }
        Ok(Gradients {
            embeddings,
            dense,
            top,
            loss: loss * inv_b,
        })
    }

    /// Chain rule through each bundle's layers: for `W = W1 W2` with table
    /// gradient `G`, `dW1 = G W2^T` and `dW2 = W1^T G`.
    pub fn layer_gradients(&self, grads: &Gradients) -> Vec<LayerGrad> {
        self.bundles
            .iter()
            .zip(&grads.embeddings)
            .map(|(b, g)| match b {
                EmbeddingBundle::SingleLayer { .. } => LayerGrad::SingleLayer { w: g.clone() },
                EmbeddingBundle::Mlet { w1, w2 } => {
                    let (d, k) = w1.shape();
                    let mut dw1 = Matrix::zeros(d, k);
                    let mut dw2 = SparseGradient::new(k, w2.cols());
                    let mut col = vec![0.0; k];
                    for (j, gj) in g.iter() {
                        for (i, &gi) in gj.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            for (l, o) in dw1.row_mut(i).iter_mut().enumerate() {
                                *o += gi * w2[(l, j)];
                            }
                        }
                        for (l, c) in col.iter_mut().enumerate() {
                            *c = (0..d).map(|i| w1[(i, l)] * gj[i]).sum();
                        }
                        dw2.add(j, &col).expect("column in range");
                    }
                    LayerGrad::Mlet { w1: dw1, w2: dw2 }
                }
            })
            .collect()
    }

    /// All trainable parameters in a fixed order: per field the table (or
    /// `W1` then `W2`), row-major; the dense weights; the top weights.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.bundles {
            match b {
                EmbeddingBundle::SingleLayer { w } => out.extend_from_slice(w.as_slice()),
                EmbeddingBundle::Mlet { w1, w2 } => {
                    out.extend_from_slice(w1.as_slice());
                    out.extend_from_slice(w2.as_slice());
                }
            }
        }
        if let Some(dw) = &self.dense_weights {
            out.extend_from_slice(dw.as_slice());
        }
        out.extend_from_slice(&self.top_weights);
        out
    }

    /// Inverse of [`CtrModel::flat_params`].
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(MletError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for b in &mut self.bundles {
            match b {
                EmbeddingBundle::SingleLayer { w } => take(w.as_mut_slice()),
                EmbeddingBundle::Mlet { w1, w2 } => {
                    take(w1.as_mut_slice());
                    take(w2.as_mut_slice());
                }
            }
        }
        if let Some(dw) = &mut self.dense_weights {
            take(dw.as_mut_slice());
        }
        take(&mut self.top_weights);
        Ok(())
    }

    /// Gradient in the order of [`CtrModel::flat_params`].
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for lg in self.layer_gradients(grads) {
            match lg {
                LayerGrad::SingleLayer { w } => out.extend_from_slice(w.densify().as_slice()),
                LayerGrad::Mlet { w1, w2 } => {
                    out.extend_from_slice(w1.as_slice());
                    out.extend_from_slice(w2.densify().as_slice());
                }
            }
        }
        if let Some(dg) = &grads.dense {
            out.extend_from_slice(dg.as_slice());
        }
        out.extend_from_slice(&grads.top);
        out
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut [EmbeddingBundle], Option<&mut Matrix>, &mut [f64]) {
        (
            &mut self.bundles,
            self.dense_weights.as_mut(),
            &mut self.top_weights,
        )
    }
}
