//! Dense row-major matrices and a full singular value decomposition.

mod matrix;
mod serialize;
mod svd;

pub use matrix::{frobenius_norm, matmul, scale_add, transpose, Matrix};
pub(crate) use serialize::read_u64;
pub use serialize::{matrix_byte_len, read_matrix, write_matrix, MATRIX_MAGIC};
pub use svd::{svd_full, svd_thin, SvdResult, MAX_SVD_DIM, MAX_SWEEPS};
