use serde::Serialize;

use super::SpectralView;

/// Weights at or below this fraction of the largest weight count as zero.
pub const GENERIC_WEIGHT_TOL: f64 = 1e-12;

/// Counts of reweighting factors `sigma1(i)^2 + sigma2(j)^2` for a `d x n`
/// table trained as `W1 (d x k) * W2 (k x n)`.
///
/// Assumes generic (full-rank) factors, which random continuous
/// initializations give almost surely: `W1` then has `min(k, d)` non-zero
/// singular values and `W2` has `min(k, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FactorCensus {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Factors with both `sigma1(i)` and `sigma2(j)` non-zero.
    pub informative_count: usize,
    /// Factors with a non-zero `sigma2(j)`.
    pub sigma2_active_count: usize,
    pub nonzero_count: usize,
    pub zero_count: usize,
}

/// Closed-form census.
///
/// For `k < d <= n` this gives `k*n + (d-k)*k` non-zero factors and
/// `(n-k)(d-k)` zero ones; for `k >= d` every factor is non-zero.
pub fn factor_census(n: usize, d: usize, k: usize) -> FactorCensus {
    let r1 = k.min(d);
    let r2 = k.min(n);
    let nonzero = r1 * n + (d - r1) * r2;
    FactorCensus {
        n,
        d,
        k,
        informative_count: r1 * r2,
        sigma2_active_count: d * r2,
        nonzero_count: nonzero,
        zero_count: d * n - nonzero,
    }
}

/// Census counted from actual spectra, treating values at or below
/// `tol * max` as zero.
pub fn census_from_weights(view: &SpectralView, k: usize, tol: f64) -> FactorCensus {
    let (d, n) = (view.d(), view.n());
    let max_w = view.weights.max_abs();
    let s1max = view.sigma1.iter().fold(0.0f64, |m, &s| m.max(s));
    let s2max = view.sigma2.iter().fold(0.0f64, |m, &s| m.max(s));
    let s1_on: Vec<bool> = view
        .sigma1
        .iter()
        .map(|&s| s > tol * s1max && s > 0.0)
        .collect();
    let s2_on: Vec<bool> = view
        .sigma2
        .iter()
        .map(|&s| s > tol * s2max && s > 0.0)
        .collect();
    let mut c = FactorCensus {
        n,
        d,
        k,
        informative_count: 0,
        sigma2_active_count: 0,
        nonzero_count: 0,
        zero_count: 0,
    };
    for (i, &on1) in s1_on.iter().enumerate() {
        for (j, &on2) in s2_on.iter().enumerate() {
            if view.weights[(i, j)] > tol * max_w && max_w > 0.0 {
                c.nonzero_count += 1;
            } else {
                c.zero_count += 1;
            }
            c.informative_count += usize::from(on1 && on2);
            c.sigma2_active_count += usize::from(on2);
        }
    }
    c
}

/// `d*n - (n+d-k)*k == (n-k)*(d-k)`, evaluated in exact integer arithmetic.
pub fn census_identity_check(n: usize, d: usize, k: usize) -> bool {
    let (n, d, k) = (n as i128, d as i128, k as i128);
    d * n - (n + d - k) * k == (n - k) * (d - k)
}

/// Classification of one update direction `u_i v_j^T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FactorClass {
    /// Single-layer training: every direction has weight one.
    Unit,
    /// Both `sigma1(i)` and `sigma2(j)` non-zero.
    Informative,
    /// `sigma1(i)` non-zero, `sigma2(j)` zero.
    Active,
    /// `sigma1(i)` zero.
    Zero,
}

impl FactorClass {
    pub fn symbol(self) -> &'static str {
        match self {
            FactorClass::Unit => "1",
            FactorClass::Informative => "**",
            FactorClass::Active => "*",
            FactorClass::Zero => "0",
        }
    }
}

/// Direction-by-direction classification keyed on `sigma1` (is the
/// direction active at all) and `sigma2` (is it also informative of `W2`).
///
/// A direction with zero `sigma1(i)` but non-zero `sigma2(j)` has a non-zero
/// weight yet is classified [`FactorClass::Zero`]; use [`factor_census`] for
/// weight counts.
pub fn classify_factors(sigma1: &[f64], sigma2: &[f64], tol: f64) -> Vec<Vec<FactorClass>> {
    let s1max = sigma1.iter().fold(0.0f64, |m, &s| m.max(s));
    let s2max = sigma2.iter().fold(0.0f64, |m, &s| m.max(s));
    sigma1
        .iter()
        .map(|&s1| {
            sigma2
                .iter()
                .map(|&s2| {
                    if !(s1 > tol * s1max && s1 > 0.0) {
                        FactorClass::Zero
                    } else if s2 > tol * s2max && s2 > 0.0 {
                        FactorClass::Informative
                    } else {
                        FactorClass::Active
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_example_counts() {
        let c = factor_census(5, 2, 1);
        assert_eq!(
            (c.nonzero_count, c.zero_count, c.informative_count),
            (6, 4, 1)
        );
        let c = factor_census(5, 2, 2);
        assert_eq!((c.nonzero_count, c.informative_count), (10, 4));
        let c = factor_census(5, 2, 4);
        assert_eq!((c.nonzero_count, c.informative_count), (10, 8));
        assert_eq!(c.sigma2_active_count, 8);
    }

    #[test]
    fn larger_census() {
        let c = factor_census(100, 16, 8);
        assert_eq!((c.nonzero_count, c.zero_count), (864, 736));
        assert_eq!(c.nonzero_count + c.zero_count, 1600);
    }

    #[test]
    fn identity_examples() {
        assert!(census_identity_check(5, 2, 1));
        assert_eq!(5 * 2 - (5 + 2 - 1), 4);
        assert!(census_identity_check(100, 16, 8));
        assert_eq!(1600 - (100 + 16 - 8) * 8, 92 * 8);
        assert!(census_identity_check(7, 3, 3));
    }

    #[test]
    fn classification_follows_sigma1_first() {
        let grid = classify_factors(&[1.0, 0.0], &[2.0, 0.0, 0.0], GENERIC_WEIGHT_TOL);
        assert_eq!(
            grid[0],
            vec![
                FactorClass::Informative,
                FactorClass::Active,
                FactorClass::Active
            ]
        );
        assert_eq!(grid[1], vec![FactorClass::Zero; 3]);
    }
}
