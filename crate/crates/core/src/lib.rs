//! Multi-layer embedding training (MLET) for sparse categorical features.
//!
//! An embedding table `W (d x n)` is trained as the product of a `d x k`
//! projection and a `k x n` table, then collapsed back to a single `d x n`
//! matrix for inference. The crate contains the factorized tables and their
//! update rules, an executable check of how those updates reweight the
//! single-layer gradient, a small dot-product CTR model, a synthetic
//! Zipf-skewed dataset, ranking metrics, post-training compression, and the
//! experiment runner behind the `mlet` command line tool.

pub mod compress;
pub mod ctrmodel;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod gradflow;
pub mod linalg;
pub mod metrics;
pub mod synthdata;

pub use embedding::{init_mlet, init_single, EmbeddingBundle, InitSpec, Query};
pub use error::{MletError, Result};
pub use gradflow::{SparseGradient, SpectralView};
pub use linalg::{Matrix, SvdResult};
