//! Shared fixtures for the benchmarks.

use mlet_core::gradflow::verify::{random_matrix, random_sparse_gradient};
use mlet_core::{Matrix, SparseGradient};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    random_matrix(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sparse_gradient(d: usize, n: usize, batch: usize, seed: u64) -> SparseGradient {
    random_sparse_gradient(d, n, batch, &mut ChaCha8Rng::seed_from_u64(seed))
}
