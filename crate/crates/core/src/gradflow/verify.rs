//! Randomized numerical verification of the update identities, used by the
//! `verify-theory` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{
    census_from_weights, census_identity_check, classify_factors, conventional_update,
    factor_census, kronecker_basis, kronecker_coeffs, kronecker_gram, mlet_effective_update,
    reweighted_update, second_order_term, spectral_view, two_layer_sgd_step, FactorClass,
    SparseGradient, GENERIC_WEIGHT_TOL,
};
use crate::error::{MletError, Result};
use crate::linalg::{matmul, scale_add, Matrix, MAX_SVD_DIM};

#[derive(Clone, Debug, Serialize)]
pub struct TheoryOptions {
    pub trials: usize,
    pub seed: u64,
    pub d_range: (usize, usize),
    pub n_range: (usize, usize),
    /// Inner dimension drawn from `[1, k_factor * d]`.
    pub k_factor: usize,
    pub batch_range: (usize, usize),
    pub etas: Vec<f64>,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 1,
            d_range: (2, 6),
            n_range: (5, 20),
            k_factor: 2,
            batch_range: (1, 4),
            etas: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub instances: usize,
    /// `(d, n, k)` of the instance with the largest residual.
    pub worst_dims: Option<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoryReport {
    pub options: TheoryOptions,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

#[derive(Default)]
struct Tracker {
    max: f64,
    count: usize,
    worst: Option<(usize, usize, usize)>,
    failed: bool,
}

impl Tracker {
    fn record(&mut self, residual: f64, dims: (usize, usize, usize)) {
        self.count += 1;
        if !residual.is_finite() {
            self.failed = true;
        }
        if residual > self.max || self.worst.is_none() {
            self.max = self.max.max(residual);
            self.worst = Some(dims);
        }
    }

    fn finish(self, name: &str, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            max_residual: self.max,
            tolerance,
            passed: !self.failed && self.max <= tolerance,
            instances: self.count,
            worst_dims: self.worst,
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Sparse gradient from `b` samples with uniformly drawn categories.
pub fn random_sparse_gradient(d: usize, n: usize, b: usize, rng: &mut impl Rng) -> SparseGradient {
    let mut g = SparseGradient::new(d, n);
    for _ in 0..b {
        let c = rng.random_range(0..n);
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        g.add(c, &v).expect("index in range");
    }
    g
}

fn rel_diff(a: &Matrix, b: &Matrix, scale: f64) -> Result<f64> {
    Ok(scale_add(a, b, -1.0)?.frobenius_norm() / scale.max(f64::MIN_POSITIVE))
}

/// Relative Frobenius gap between the reweighted spectral update and the
/// first-order factorized update, normalized by the size of the update.
pub fn check_update_identity(opts: &TheoryOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut t = Tracker::default();
    for _ in 0..opts.trials {
        let d = rng.random_range(opts.d_range.0..=opts.d_range.1);
        let n = rng.random_range(opts.n_range.0..=opts.n_range.1);
        let k = rng.random_range(1..=opts.k_factor * d);
        let b = rng.random_range(opts.batch_range.0..=opts.batch_range.1);
        let w1 = random_matrix(d, k, &mut rng);
        let w2 = random_matrix(k, n, &mut rng);
        let g = random_sparse_gradient(d, n, b, &mut rng);
        let eta = 0.1;
        let w = matmul(&w1, &w2)?;
        let view = spectral_view(&w1, &w2, &g)?;
        let reweighted = reweighted_update(&view, &w, eta)?;
        let effective = mlet_effective_update(&w1, &w2, &g, eta)?;
        let step = scale_add(&effective, &w, -1.0)?.frobenius_norm();
        t.record(rel_diff(&reweighted, &effective, step)?, (d, n, k));
    }
    Ok(t.finish("update_identity", 1e-8))
}

/// Elementwise gap between (collapsed two-layer step - first-order update)
/// and the explicit second-order term, plus the spread of
/// `|residual| / eta^2` across learning rates.
pub fn check_second_order(opts: &TheoryOptions) -> Result<(CheckResult, CheckResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut exact = Tracker::default();
    let mut ratio = Tracker::default();
    for _ in 0..opts.trials {
        let d = rng.random_range(opts.d_range.0..=opts.d_range.1);
        let n = rng.random_range(opts.n_range.0..=opts.n_range.1);
        let k = rng.random_range(1..=opts.k_factor * d);
        let b = rng.random_range(opts.batch_range.0..=opts.batch_range.1);
        let w1 = random_matrix(d, k, &mut rng);
        let w2 = random_matrix(k, n, &mut rng);
        let g = random_sparse_gradient(d, n, b, &mut rng);
        let mut ratios = Vec::new();
        for &eta in &opts.etas {
            let step = two_layer_sgd_step(&w1, &w2, &g, eta)?;
            let effective = mlet_effective_update(&w1, &w2, &g, eta)?;
            let residual = scale_add(&step.collapsed, &effective, -1.0)?;
            let term = second_order_term(&w1, &w2, &g, eta)?;
            exact.record(scale_add(&residual, &term, -1.0)?.max_abs(), (d, n, k));
            ratios.push(residual.frobenius_norm() / (eta * eta));
        }
        let base = ratios[0];
        if base > 0.0 {
            let spread = ratios
                .iter()
                .map(|r| (r - base).abs() / base)
                .fold(0.0, f64::max);
            ratio.record(spread, (d, n, k));
        }
    }
    Ok((
        exact.finish("second_order_residual", 1e-12),
        ratio.finish("second_order_ratio", 1e-6),
    ))
}

/// Gram matrix of the Kronecker basis against the identity, for every
/// `(d, n)` with `d*n <= max_dn`, plus the agreement of projected and
/// directly computed coefficients.
pub fn check_kronecker_basis(seed: u64, max_dn: usize) -> Result<(CheckResult, CheckResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut gram = Tracker::default();
    let mut coeff = Tracker::default();
    for d in 1..=max_dn {
        for n in 1..=max_dn / d {
            let k = rng.random_range(1..=2 * d);
            let w1 = random_matrix(d, k, &mut rng);
            let w2 = random_matrix(k, n, &mut rng);
            let g = random_sparse_gradient(d, n, rng.random_range(1..=4), &mut rng);
            let view = spectral_view(&w1, &w2, &g)?;
            let basis = kronecker_basis(&view);
            let gm = kronecker_gram(&basis);
            gram.record(
                scale_add(&gm, &Matrix::identity(d * n), -1.0)?.max_abs(),
                (d, n, k),
            );
            let proj = kronecker_coeffs(&view, &g);
            coeff.record(scale_add(&proj, &view.coeffs, -1.0)?.max_abs(), (d, n, k));
        }
    }
    Ok((
        gram.finish("kronecker_gram", 1e-10),
        coeff.finish("kronecker_coeffs", 1e-10),
    ))
}

/// Non-zero weight counts from random full-rank factors against the closed
/// form, over every `n <= max_n`, `d <= max_d`, `k <= max_k`.
pub fn check_census(seed: u64, max_n: usize, max_d: usize, max_k: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut t = Tracker::default();
    for n in 1..=max_n {
        for d in 1..=max_d {
            for k in 1..=max_k {
                let w1 = random_matrix(d, k, &mut rng);
                let w2 = random_matrix(k, n, &mut rng);
                let view = spectral_view(&w1, &w2, &SparseGradient::new(d, n))?;
                let brute = census_from_weights(&view, k, GENERIC_WEIGHT_TOL);
                let closed = factor_census(n, d, k);
                let mismatch = brute != closed;
                t.record(f64::from(u8::from(mismatch)), (d, n, k));
            }
        }
    }
    Ok(t.finish("factor_census", 0.0))
}

/// The integer identity over all `k < d <= n <= max_n`.
pub fn check_census_identity(max_n: usize) -> CheckResult {
    let mut t = Tracker::default();
    for n in 1..=max_n {
        for d in 1..=n {
            for k in 1..d {
                t.record(
                    f64::from(u8::from(!census_identity_check(n, d, k))),
                    (d, n, k),
                );
            }
        }
    }
    t.finish("census_identity", 0.0)
}

/// One column step with `b` samples on an `n`-category table: number of
/// columns the single-layer and the factorized updates change.
pub fn sparsity_contrast(
    d: usize,
    n: usize,
    k: usize,
    b: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = random_matrix(d, k, &mut rng);
    let w2 = random_matrix(k, n, &mut rng);
    let w = matmul(&w1, &w2)?;
    let g = random_sparse_gradient(d, n, b, &mut rng);
    let single = conventional_update(&w, &g, 0.1)?;
    let step = two_layer_sgd_step(&w1, &w2, &g, 0.1)?;
    Ok((
        changed_columns(&w, &single),
        changed_columns(&w, &step.collapsed),
    ))
}

/// Columns whose difference has positive norm.
pub fn changed_columns(before: &Matrix, after: &Matrix) -> usize {
    (0..before.cols())
        .filter(|&c| (0..before.rows()).any(|r| before[(r, c)] != after[(r, c)]))
        .count()
}

fn check_sparsity(seed: u64) -> Result<CheckResult> {
    let (single, mlet) = sparsity_contrast(8, 1000, 16, 4, seed.wrapping_add(4))?;
    let ok = single <= 4 && mlet == 1000;
    Ok(CheckResult {
        name: "sparsity_contrast".into(),
        max_residual: f64::from(u8::from(!ok)),
        tolerance: 0.0,
        passed: ok,
        instances: 1,
        worst_dims: Some((8, 1000, 16)),
    })
}

/// Row labels and classification grid for a `d x n` table: one single-layer
/// row, then one row per inner dimension in `ks`. Each row lists the
/// directions `u_i v_j^T` with `i` slowest.
pub fn classification_table(
    d: usize,
    n: usize,
    ks: &[usize],
    seed: u64,
) -> Result<Vec<(String, Vec<FactorClass>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![("single-layer".to_string(), vec![FactorClass::Unit; d * n])];
    for &k in ks {
        let w1 = random_matrix(d, k, &mut rng);
        let w2 = random_matrix(k, n, &mut rng);
        let view = spectral_view(&w1, &w2, &SparseGradient::new(d, n))?;
        let grid = classify_factors(&view.sigma1, &view.sigma2, GENERIC_WEIGHT_TOL);
        rows.push((format!("mlet k={k}"), grid.into_iter().flatten().collect()));
    }
    Ok(rows)
}

/// Runs every check. Dimensions beyond the full-SVD cap are rejected.
pub fn verify_theory(opts: &TheoryOptions) -> Result<TheoryReport> {
    if opts.n_range.1 > MAX_SVD_DIM || opts.k_factor * opts.d_range.1 > MAX_SVD_DIM {
        return Err(MletError::InvalidArgument(format!(
            "theory checks need full SVDs; dimensions are capped at {MAX_SVD_DIM}"
        )));
    }
    if opts.d_range.0 == 0 || opts.n_range.0 == 0 || opts.batch_range.0 == 0 || opts.etas.is_empty()
    {
        return Err(MletError::InvalidArgument(
            "dimension and batch ranges must start at 1, and at least one eta is needed".into(),
        ));
    }
    let mut checks = vec![check_update_identity(opts)?];
    let (exact, ratio) = check_second_order(opts)?;
    checks.push(exact);
    checks.push(ratio);
    let (gram, coeff) = check_kronecker_basis(opts.seed, 64)?;
    checks.push(gram);
    checks.push(coeff);
    checks.push(check_census(opts.seed, 12, 6, 12)?);
    checks.push(check_census_identity(100));
    checks.push(check_sparsity(opts.seed)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(TheoryReport {
        options: opts.clone(),
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let opts = TheoryOptions {
            trials: 10,
            ..Default::default()
        };
        let report = verify_theory(&opts).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let opts = TheoryOptions {
            n_range: (5, MAX_SVD_DIM + 1),
            ..Default::default()
        };
        assert!(verify_theory(&opts).is_err());
    }

    #[test]
    fn single_layer_changes_few_columns() {
        let (single, mlet) = sparsity_contrast(3, 50, 4, 2, 9).unwrap();
        assert!(single <= 2);
        assert_eq!(mlet, 50);
    }
}
