//! Embedding tables, either a single `d x n` matrix or the factorized pair
//! `W1 (d x k) * W2 (k x n)` that is collapsed back to one matrix for
//! inference.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{MletError, Result};
use crate::linalg::{matmul, matrix_byte_len, read_matrix, read_u64, write_matrix, Matrix};

/// Initialization of the table-shaped layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TableInit {
    /// `Uniform(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    XavierUniform,
}

/// Initialization of the extra projection layer of a factorized table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorInit {
    Gaussian { std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub table_scheme: TableInit,
    pub factor_scheme: FactorInit,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(std: f64, seed: u64) -> Self {
        Self {
            table_scheme: TableInit::XavierUniform,
            factor_scheme: FactorInit::Gaussian { std },
            seed,
        }
    }

    pub fn factor_std(&self) -> f64 {
        match self.factor_scheme {
            FactorInit::Gaussian { std } => std,
        }
    }

    /// Same scheme with a seed derived from `stream`.
    pub fn derive(&self, stream: u64) -> Self {
        Self {
            seed: mix_seed(self.seed, stream),
            ..*self
        }
    }
}

/// Default projection-layer std for the dot-product model trained with SGD.
pub const DEFAULT_STD_DOT_MODEL: f64 = 0.25;
/// Default projection-layer std for other models.
pub const DEFAULT_STD_OTHER: f64 = 0.5;

/// SplitMix64 finalizer over `seed ^ stream`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A batch of category indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    indices: Vec<usize>,
}

impl Query {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(MletError::InvalidArgument("query batch is empty".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingBundle {
    SingleLayer { w: Matrix },
    Mlet { w1: Matrix, w2: Matrix },
}

/// Outcome of [`EmbeddingBundle::collapse`].
#[derive(Clone, Debug)]
pub struct Collapsed {
    pub bundle: EmbeddingBundle,
    /// The input was already single-layer and is returned unchanged.
    pub was_noop: bool,
}

fn check_dims(dims: &[(&str, usize)]) -> Result<()> {
    for (name, v) in dims {
        if *v == 0 {
            return Err(MletError::InvalidDimensions(format!(
                "{name} must be at least 1"
            )));
        }
    }
    Ok(())
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn init_single(d: usize, n: usize, spec: &InitSpec) -> Result<EmbeddingBundle> {
    check_dims(&[("d", d), ("n", n)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = match spec.table_scheme {
        TableInit::XavierUniform => xavier(d, n, &mut rng),
    };
    Ok(EmbeddingBundle::SingleLayer { w })
}

/// `W2` (the per-category layer) gets the table scheme; `W1` (the `d x k`
/// projection) gets the factor scheme.
pub fn init_mlet(d: usize, n: usize, k: usize, spec: &InitSpec) -> Result<EmbeddingBundle> {
    check_dims(&[("d", d), ("n", n), ("k", k)])?;
    let std = spec.factor_std();
    if !(std > 0.0 && std.is_finite()) {
        return Err(MletError::InvalidArgument(format!(
            "initialization std must be positive, got {std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w2 = match spec.table_scheme {
        TableInit::XavierUniform => xavier(k, n, &mut rng),
    };
    let normal = Normal::new(0.0, std).expect("valid std");
    let w1 = Matrix::from_fn(d, k, |_, _| normal.sample(&mut rng));
    Ok(EmbeddingBundle::Mlet { w1, w2 })
}

const TAG_SINGLE: u8 = 0;
const TAG_MLET: u8 = 1;

impl EmbeddingBundle {
    pub fn d(&self) -> usize {
        match self {
            Self::SingleLayer { w } => w.rows(),
            Self::Mlet { w1, .. } => w1.rows(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::SingleLayer { w } => w.cols(),
            Self::Mlet { w2, .. } => w2.cols(),
        }
    }

    /// Inner dimension, `None` for single-layer tables.
    pub fn k(&self) -> Option<usize> {
        match self {
            Self::SingleLayer { .. } => None,
            Self::Mlet { w1, .. } => Some(w1.cols()),
        }
    }

    pub fn is_mlet(&self) -> bool {
        matches!(self, Self::Mlet { .. })
    }

    /// Trainable parameters.
    pub fn param_count(&self) -> usize {
        match self {
            Self::SingleLayer { w } => w.rows() * w.cols(),
            Self::Mlet { w1, w2 } => w1.rows() * w1.cols() + w2.rows() * w2.cols(),
        }
    }

    /// Parameters after collapsing: always `d * n`.
    pub fn inference_param_count(&self) -> usize {
        self.d() * self.n()
    }

    /// Writes the embedding of category `index` into `out` (length `d`).
    pub fn lookup_into(&self, index: usize, out: &mut [f64]) -> Result<()> {
        let n = self.n();
        if index >= n {
            return Err(MletError::IndexOutOfRange { index, n });
        }
        match self {
            Self::SingleLayer { w } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = w[(i, index)];
                }
            }
            Self::Mlet { w1, w2 } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for r in 0..w2.rows() {
                    let x = w2[(r, index)];
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += w1[(i, r)] * x;
                    }
                }
            }
        }
        Ok(())
    }

    /// Embeddings of every queried category as the columns of a `d x b`
    /// matrix. Columns are gathered directly; no one-hot product is formed.
    pub fn lookup(&self, query: &Query) -> Result<Matrix> {
        let d = self.d();
        let mut out = Matrix::zeros(d, query.len());
        let mut col = vec![0.0; d];
        for (j, &idx) in query.indices().iter().enumerate() {
            self.lookup_into(idx, &mut col)?;
            out.set_col(j, &col);
        }
        Ok(out)
    }

    /// The effective `d x n` table.
    pub fn table(&self) -> Result<Matrix> {
        match self {
            Self::SingleLayer { w } => Ok(w.clone()),
            Self::Mlet { w1, w2 } => matmul(w1, w2),
        }
    }

    /// Replaces the factor pair by its product.
    pub fn collapse(&self) -> Result<Collapsed> {
        match self {
            Self::SingleLayer { .. } => Ok(Collapsed {
                bundle: self.clone(),
                was_noop: true,
            }),
            Self::Mlet { w1, w2 } => Ok(Collapsed {
                bundle: Self::SingleLayer { w: matmul(w1, w2)? },
                was_noop: false,
            }),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Self::SingleLayer { w } => w.max_abs(),
            Self::Mlet { w1, w2 } => w1.max_abs().max(w2.max_abs()),
        }
    }

    /// Tag byte, `d`, `n`, `k` (0 for single-layer) as little-endian `u64`,
    /// then each matrix in `MLETMAT1` format.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let tag = if self.is_mlet() { TAG_MLET } else { TAG_SINGLE };
        w.write_all(&[tag])?;
        for v in [self.d(), self.n(), self.k().unwrap_or(0)] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        match self {
            Self::SingleLayer { w: m } => write_matrix(w, m),
            Self::Mlet { w1, w2 } => {
                write_matrix(w, w1)?;
                write_matrix(w, w2)
            }
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut tag = [0u8];
        r.read_exact(&mut tag)?;
        let d = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        let k = read_u64(r)? as usize;
        let bundle = match tag[0] {
            TAG_SINGLE => Self::SingleLayer { w: read_matrix(r)? },
            TAG_MLET => Self::Mlet {
                w1: read_matrix(r)?,
                w2: read_matrix(r)?,
            },
            t => return Err(MletError::Format(format!("unknown bundle tag {t}"))),
        };
        if bundle.d() != d || bundle.n() != n || bundle.k().unwrap_or(0) != k {
            return Err(MletError::Format(
                "bundle header disagrees with matrices".into(),
            ));
        }
        if let Self::Mlet { w1, w2 } = &bundle {
            if w1.cols() != w2.rows() {
                return Err(MletError::Format("factor shapes do not chain".into()));
            }
        }
        Ok(bundle)
    }

    pub fn byte_len(&self) -> usize {
        25 + match self {
            Self::SingleLayer { w } => matrix_byte_len(w.rows(), w.cols()),
            Self::Mlet { w1, w2 } => {
                matrix_byte_len(w1.rows(), w1.cols()) + matrix_byte_len(w2.rows(), w2.cols())
            }
        }
    }
}
