//! One-sided (Hestenes) Jacobi SVD.
//!
//! The input is reduced to the tall case (`rows >= cols`, transposing when
//! needed). Column pairs are rotated until every pair is numerically
//! orthogonal; the rotated column norms are the singular values and the
//! accumulated rotations form `V`. Left vectors for zero singular values, and
//! the `m - n` extra columns of a full `U`, are filled in from a Householder
//! completion of the non-null left vectors.

use super::Matrix;
use crate::error::{MletError, Result};

/// Largest `max(rows, cols)` accepted by [`svd_full`], which stores an
/// `n x n` basis, and largest `min(rows, cols)` accepted by [`svd_thin`].
pub const MAX_SVD_DIM: usize = 4096;

/// Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;

/// `a = u * diag(sigma) * vt`.
///
/// From [`svd_full`]: `u` is `m x m`, `vt` is `n x n`. From [`svd_thin`]:
/// `u` is `m x r`, `vt` is `r x n` with `r = min(m, n)`. `sigma` always has
/// `min(m, n)` non-increasing, non-negative entries.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * vt`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.vt.cols());
        let mut out = Matrix::zeros(m, n);
        for (l, &s) in self.sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let ui = self.u[(i, l)] * s;
                if ui == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (o, &v) in row.iter_mut().zip(self.vt.row(l)) {
                    *o += ui * v;
                }
            }
        }
        out
    }

    /// Number of singular values above `tol * sigma_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let max = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma
            .iter()
            .filter(|&&s| s > tol * max && s > 0.0)
            .count()
    }
}

/// Full SVD: square `u` and `vt`, including null-space directions.
///
/// Singular vectors are normalized so that the first non-zero entry of every
/// left singular vector is non-negative (the paired right vector is flipped
/// along with it).
pub fn svd_full(a: &Matrix) -> Result<SvdResult> {
    decompose(a, true)
}

/// Thin SVD: `u` is `m x min(m,n)`, `vt` is `min(m,n) x n`.
pub fn svd_thin(a: &Matrix) -> Result<SvdResult> {
    decompose(a, false)
}

fn decompose(a: &Matrix, full: bool) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let limiting = if full { m.max(n) } else { m.min(n) };
    if limiting > MAX_SVD_DIM {
        return Err(MletError::InvalidDimensions(format!(
            "svd input {m}x{n} exceeds the {MAX_SVD_DIM} dimension limit"
        )));
    }
    let mut res = if m >= n {
        let t = tall_svd(a, full)?;
        SvdResult {
            u: t.left,
            sigma: t.sigma,
            vt: t.right.transpose(),
        }
    } else {
        // a^T = U' S V'^T  =>  a = V' S U'^T
        let t = tall_svd(&a.transpose(), full)?;
        SvdResult {
            u: t.right,
            sigma: t.sigma,
            vt: t.left.transpose(),
        }
    };
    fix_signs(&mut res);
    Ok(res)
}

struct Tall {
    /// `m x m` (full) or `m x n` (thin).
    left: Matrix,
    sigma: Vec<f64>,
    /// `n x n`.
    right: Matrix,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn tall_svd(a: &Matrix, full: bool) -> Result<Tall> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let norm_sq = a.frobenius_norm().powi(2);
    let tol = (m as f64) * f64::EPSILON;

    let mut converged = n < 2;
    let mut off_mass = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        off_mass = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                off_mass += gamma * gamma;
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        // converged once every column pair passes the relative test
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(MletError::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            residual: off_mass.sqrt() / norm_sq.max(f64::MIN_POSITIVE),
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma_max = order.first().map_or(0.0, |&i| norms[i]);
    let rank_tol = (m as f64) * f64::EPSILON * sigma_max;

    let mut sigma = Vec::with_capacity(n);
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(if full { m } else { n });
    let mut right = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        right.set_col(dst, &v[src]);
        if s > rank_tol && s > 0.0 {
            sigma.push(s);
            left.push(cols[src].iter().map(|x| x / s).collect());
        } else {
            sigma.push(0.0);
        }
    }
    let want = if full { m } else { n };
    let extra = complete_basis(&left, m, want - left.len());
    left.extend(extra);

    let mut left_m = Matrix::zeros(m, want);
    for (j, c) in left.iter().enumerate() {
        left_m.set_col(j, c);
    }
    Ok(Tall {
        left: left_m,
        sigma,
        right,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (x, y) = (&mut head[p], &mut tail[0]);
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// `count` unit vectors orthogonal to each other and to the orthonormal set
/// `basis` (all of length `m`).
///
/// Householder QR of `basis` yields an orthogonal `Q` whose leading columns
/// span `basis`; the trailing columns of `Q` are the completion.
fn complete_basis(basis: &[Vec<f64>], m: usize, count: usize) -> Vec<Vec<f64>> {
    if count == 0 {
        return Vec::new();
    }
    let r = basis.len();
    let mut work: Vec<Vec<f64>> = basis.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(r);
    for j in 0..r {
        // Householder vector zeroing work[j][j+1..].
        let x = &work[j][j..];
        let norm = dot(x, x).sqrt();
        let mut h = vec![0.0; m];
        if norm > 0.0 {
            let alpha = if x[0] >= 0.0 { -norm } else { norm };
            h[j..].copy_from_slice(x);
            h[j] -= alpha;
            let hn = dot(&h, &h).sqrt();
            if hn > 0.0 {
                h.iter_mut().for_each(|e| *e /= hn);
            }
        }
        for col in work.iter_mut().skip(j) {
            let proj = 2.0 * dot(&h, col);
            col.iter_mut().zip(&h).for_each(|(c, hh)| *c -= proj * hh);
        }
        reflectors.push(h);
    }
    (r..r + count)
        .map(|c| {
            let mut e = vec![0.0; m];
            e[c] = 1.0;
            for h in reflectors.iter().rev() {
                let proj = 2.0 * dot(h, &e);
                e.iter_mut().zip(h).for_each(|(x, hh)| *x -= proj * hh);
            }
            e
        })
        .collect()
}

fn fix_signs(res: &mut SvdResult) {
    let m = res.u.rows();
    let paired = res.sigma.len();
    for i in 0..res.u.cols() {
        let first = (0..m).map(|r| res.u[(r, i)]).find(|x| x.abs() > 1e-12);
        if matches!(first, Some(x) if x < 0.0) {
            for r in 0..m {
                res.u[(r, i)] = -res.u[(r, i)];
            }
            if i < paired {
                res.vt.row_mut(i).iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
}
