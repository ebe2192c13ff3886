//! Update rules for single-layer and factorized embedding tables, and the
//! spectral analysis that relates them.
//!
//! A single-layer table `W` (d x n) moves only in the columns that were
//! queried: `W - eta * G`. Training the factorization `W = W1 * W2` instead
//! moves the product, to first order in `eta`, by
//! `-eta * (W1 W1^T G + G W2^T W2)`, which is dense. In the orthonormal basis
//! `u_i v_j^T` built from the left singular vectors of `W1` and the right
//! singular vectors of `W2`, that dense update is the single-layer update
//! with each coordinate `g_ij` scaled by `sigma1(i)^2 + sigma2(j)^2`.

mod census;
mod sparse;
mod spectral;
mod updates;
pub mod verify;

pub use census::{
    census_from_weights, census_identity_check, classify_factors, factor_census, FactorCensus,
    FactorClass, GENERIC_WEIGHT_TOL,
};
pub use sparse::SparseGradient;
pub use spectral::{
    kronecker_basis, kronecker_coeffs, kronecker_gram, reweighted_update, spectral_view,
    SpectralView,
};
pub use updates::{
    conventional_update, mlet_effective_update, second_order_term, two_layer_sgd_step, TwoLayerStep,
};
