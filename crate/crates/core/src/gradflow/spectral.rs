use super::SparseGradient;
use crate::error::{MletError, Result};
use crate::linalg::{matmul, scale_add, svd_full, Matrix, SvdResult};

/// Gradient and factors expressed in the basis `{u_i v_j^T}`.
///
/// `u_i` are the left singular vectors of `W1` (all `d` of them) and `v_j`
/// the right singular vectors of `W2` (all `n`). Singular values past the
/// rank of a factor are stored as zeros so that `sigma1` has length `d` and
/// `sigma2` has length `n`.
#[derive(Clone, Debug)]
pub struct SpectralView {
    pub svd1: SvdResult,
    pub svd2: SvdResult,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// `g_ij = u_i^T G v_j`, `d x n`.
    pub coeffs: Matrix,
    /// `sigma1(i)^2 + sigma2(j)^2`, `d x n`.
    pub weights: Matrix,
}

impl SpectralView {
    pub fn d(&self) -> usize {
        self.sigma1.len()
    }

    pub fn n(&self) -> usize {
        self.sigma2.len()
    }

    /// `U` (d x d).
    pub fn u(&self) -> &Matrix {
        &self.svd1.u
    }

    /// `V^T` (n x n).
    pub fn vt(&self) -> &Matrix {
        &self.svd2.vt
    }

    /// `sum_ij m_ij u_i v_j^T`, i.e. `U M V^T`.
    pub fn from_coords(&self, m: &Matrix) -> Result<Matrix> {
        matmul(&matmul(self.u(), m)?, self.vt())
    }

    /// `sum_ij g_ij u_i v_j^T`; equals `G` when the bases are complete.
    pub fn reconstruct_gradient(&self) -> Result<Matrix> {
        self.from_coords(&self.coeffs)
    }
}

pub fn spectral_view(w1: &Matrix, w2: &Matrix, grad: &SparseGradient) -> Result<SpectralView> {
    if w1.cols() != w2.rows() {
        return Err(MletError::DimensionMismatch {
            op: "spectral_view",
            left: w1.shape(),
            right: w2.shape(),
        });
    }
    let (d, n) = (w1.rows(), w2.cols());
    grad.check_shape("spectral_view", d, n)?;
    let svd1 = svd_full(w1)?;
    let svd2 = svd_full(w2)?;
    let sigma1 = padded(&svd1.sigma, d);
    let sigma2 = padded(&svd2.sigma, n);

    // G V = sum_c g_c (row c of V), and row c of V is column c of V^T.
    let mut gv = Matrix::zeros(d, n);
    for (c, g) in grad.iter() {
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            let row = gv.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o += gi * svd2.vt[(j, c)];
            }
        }
    }
    let coeffs = matmul(&svd1.u.transpose(), &gv)?;
    let weights = Matrix::from_fn(d, n, |i, j| sigma1[i].powi(2) + sigma2[j].powi(2));
    Ok(SpectralView {
        svd1,
        svd2,
        sigma1,
        sigma2,
        coeffs,
        weights,
    })
}

/// `W - eta * sum_ij g_ij (sigma1(i)^2 + sigma2(j)^2) u_i v_j^T`.
pub fn reweighted_update(view: &SpectralView, w: &Matrix, eta: f64) -> Result<Matrix> {
    if w.shape() != (view.d(), view.n()) {
        return Err(MletError::DimensionMismatch {
            op: "reweighted_update",
            left: w.shape(),
            right: (view.d(), view.n()),
        });
    }
    let scaled = Matrix::from_fn(view.d(), view.n(), |i, j| {
        view.coeffs[(i, j)] * view.weights[(i, j)]
    });
    let delta = view.from_coords(&scaled)?;
    scale_add(w, &delta, -eta)
}

/// The `d*n` vectors `v_j (x) u_i`, each of length `d*n`, ordered with `i`
/// fastest. Vector `(i, j)` is `vec(u_i v_j^T)` under column stacking.
pub fn kronecker_basis(view: &SpectralView) -> Vec<Vec<f64>> {
    let (d, n) = (view.d(), view.n());
    let mut basis = Vec::with_capacity(d * n);
    for j in 0..n {
        for i in 0..d {
            let mut e = vec![0.0; d * n];
            for jj in 0..n {
                let vj = view.vt()[(j, jj)];
                for ii in 0..d {
                    e[jj * d + ii] = vj * view.u()[(ii, i)];
                }
            }
            basis.push(e);
        }
    }
    basis
}

/// Inner products of every pair of basis vectors.
pub fn kronecker_gram(basis: &[Vec<f64>]) -> Matrix {
    let m = basis.len();
    Matrix::from_fn(m, m, |a, b| {
        basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum()
    })
}

/// `g_ij` computed by projecting `vec(G)` onto each Kronecker basis vector.
pub fn kronecker_coeffs(view: &SpectralView, grad: &SparseGradient) -> Matrix {
    let (d, n) = (view.d(), view.n());
    let dense = grad.densify();
    let mut vec_g = vec![0.0; d * n];
    for j in 0..n {
        for i in 0..d {
            vec_g[j * d + i] = dense[(i, j)];
        }
    }
    let basis = kronecker_basis(view);
    Matrix::from_fn(d, n, |i, j| {
        basis[j * d + i]
            .iter()
            .zip(&vec_g)
            .map(|(x, y)| x * y)
            .sum()
    })
}

fn padded(sigma: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    out[..sigma.len()].copy_from_slice(sigma);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradflow::mlet_effective_update;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_grad(d: usize, n: usize, b: usize, rng: &mut impl Rng) -> SparseGradient {
        let samples: Vec<_> = (0..b)
            .map(|_| {
                (
                    rng.random_range(0..n),
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        SparseGradient::from_samples(&samples, d, n).unwrap()
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        scale_add(a, b, -1.0).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn basis_element_has_unit_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w1, w2) = (random(3, 4, &mut rng), random(4, 6, &mut rng));
        let probe = spectral_view(&w1, &w2, &SparseGradient::new(3, 6)).unwrap();
        // G = u_1 v_1^T, written column by column
        let mut g = SparseGradient::new(3, 6);
        for c in 0..6 {
            let col: Vec<f64> = (0..3)
                .map(|i| probe.u()[(i, 0)] * probe.vt()[(0, c)])
                .collect();
            g.add(c, &col).unwrap();
        }
        let view = spectral_view(&w1, &w2, &g).unwrap();
        for i in 0..3 {
            for j in 0..6 {
                let expect = if (i, j) == (0, 0) { 1.0 } else { 0.0 };
                assert!((view.coeffs[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficients_reconstruct_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w1, w2) = (random(4, 2, &mut rng), random(2, 9, &mut rng));
        let g = random_grad(4, 9, 3, &mut rng);
        let view = spectral_view(&w1, &w2, &g).unwrap();
        assert!(rel(&view.reconstruct_gradient().unwrap(), &g.densify()) < 1e-9);
        assert_eq!(view.sigma1.len(), 4);
        assert_eq!(view.sigma2.len(), 9);
        assert!(view.sigma1[2..].iter().all(|&s| s == 0.0));
        assert!(view.sigma2[2..].iter().all(|&s| s == 0.0));
        assert!(view.weights.as_slice().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn kronecker_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w1, w2) = (random(2, 3, &mut rng), random(3, 3, &mut rng));
        let g = random_grad(2, 3, 2, &mut rng);
        let view = spectral_view(&w1, &w2, &g).unwrap();
        let gram = kronecker_gram(&kronecker_basis(&view));
        assert_eq!(gram.shape(), (6, 6));
        assert!(
            scale_add(&gram, &Matrix::identity(6), -1.0)
                .unwrap()
                .max_abs()
                < 1e-10
        );
        let direct = kronecker_coeffs(&view, &g);
        assert!(scale_add(&direct, &view.coeffs, -1.0).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn reweighting_matches_effective_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = rng.random_range(2..=6);
            let n = rng.random_range(5..=20);
            let k = rng.random_range(1..=2 * d);
            let (w1, w2) = (random(d, k, &mut rng), random(k, n, &mut rng));
            let g = random_grad(d, n, rng.random_range(1..=4), &mut rng);
            let w = matmul(&w1, &w2).unwrap();
            let view = spectral_view(&w1, &w2, &g).unwrap();
            let got = reweighted_update(&view, &w, 0.05).unwrap();
            let oracle = mlet_effective_update(&w1, &w2, &g, 0.05).unwrap();
            assert!(rel(&got, &oracle) < 1e-8);
        }
    }

    #[test]
    fn unit_spectra_double_the_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // d = k = n: both factors orthogonal, every sigma is one
        let w1 = Matrix::identity(3);
        let q = svd_full(&random(3, 3, &mut rng)).unwrap().u;
        let g = random_grad(3, 3, 2, &mut rng);
        let w = matmul(&w1, &q).unwrap();
        let view = spectral_view(&w1, &q, &g).unwrap();
        let got = reweighted_update(&view, &w, 0.1).unwrap();
        let expect = scale_add(&w, &g.densify(), -0.2).unwrap();
        assert!(scale_add(&got, &expect, -1.0).unwrap().max_abs() < 1e-12);
        assert_eq!(reweighted_update(&view, &w, 0.0).unwrap(), w);
    }
}
