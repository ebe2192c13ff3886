use std::collections::BTreeMap;

use crate::error::{MletError, Result};
use crate::linalg::Matrix;

/// Column-sparse gradient of the loss with respect to a `d x n` table.
///
/// Column `C` holds the sum of the per-sample gradients `g` of every sample
/// that queried category `C`; all other columns are zero. A batch of `b`
/// samples therefore has at most `b` stored columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGradient {
    d: usize,
    n: usize,
    entries: BTreeMap<usize, Vec<f64>>,
}

impl SparseGradient {
    pub fn new(d: usize, n: usize) -> Self {
        Self {
            d,
            n,
            entries: BTreeMap::new(),
        }
    }

    /// Accumulates `(index, g)` pairs, summing duplicates.
    pub fn from_samples(per_sample: &[(usize, Vec<f64>)], d: usize, n: usize) -> Result<Self> {
        let mut grad = Self::new(d, n);
        for (idx, g) in per_sample {
            grad.add(*idx, g)?;
        }
        Ok(grad)
    }

    pub fn add(&mut self, index: usize, g: &[f64]) -> Result<()> {
        if index >= self.n {
            return Err(MletError::IndexOutOfRange { index, n: self.n });
        }
        if g.len() != self.d {
            return Err(MletError::InvalidDimensions(format!(
                "gradient vector has length {}, table dimension is {}",
                g.len(),
                self.d
            )));
        }
        let col = self
            .entries
            .entry(index)
            .or_insert_with(|| vec![0.0; g.len()]);
        col.iter_mut().zip(g).for_each(|(c, v)| *c += v);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (possibly non-zero) columns.
    pub fn nnz_columns(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored columns in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.entries.iter().map(|(&c, g)| (c, g.as_slice()))
    }

    pub fn column(&self, index: usize) -> Option<&[f64]> {
        self.entries.get(&index).map(Vec::as_slice)
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.entries.values_mut() {
            g.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn densify(&self) -> Matrix {
        let mut m = Matrix::zeros(self.d, self.n);
        for (c, g) in self.iter() {
            m.set_col(c, g);
        }
        m
    }

    pub(crate) fn check_shape(&self, op: &'static str, d: usize, n: usize) -> Result<()> {
        if (self.d, self.n) != (d, n) {
            return Err(MletError::DimensionMismatch {
                op,
                left: (d, n),
                right: (self.d, self.n),
            });
        }
        Ok(())
    }
}
