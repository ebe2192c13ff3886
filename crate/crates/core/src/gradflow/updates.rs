use super::SparseGradient;
use crate::error::{MletError, Result};
use crate::linalg::{matmul, scale_add, Matrix};

/// `W - eta * G`, writing only the stored columns of `G`.
pub fn conventional_update(w: &Matrix, grad: &SparseGradient, eta: f64) -> Result<Matrix> {
    grad.check_shape("conventional_update", w.rows(), w.cols())?;
    check_eta(eta)?;
    let mut out = w.clone();
    for (c, g) in grad.iter() {
        for (i, gi) in g.iter().enumerate() {
            out[(i, c)] -= eta * gi;
        }
    }
    finite(out, "conventional_update")
}

/// First-order update of the product `W1 W2` under factorized training:
/// `W1 W2 - eta * W1 W1^T G - eta * G W2^T W2`.
pub fn mlet_effective_update(
    w1: &Matrix,
    w2: &Matrix,
    grad: &SparseGradient,
    eta: f64,
) -> Result<Matrix> {
    check_factors("mlet_effective_update", w1, w2, grad)?;
    check_eta(eta)?;
    let w = matmul(w1, w2)?;
    // W1 (W1^T G): only the stored columns of G are non-zero.
    let mut left = Matrix::zeros(w.rows(), w.cols());
    for (c, g) in grad.iter() {
        let proj = mat_t_vec(w1, g);
        let col = mat_vec(w1, &proj);
        left.set_col(c, &col);
    }
    // (G W2^T) W2 is dense.
    let gw2t = grad_times_w2t(grad, w2);
    let right = matmul(&gw2t, w2)?;
    let delta = scale_add(&left, &right, 1.0)?;
    scale_add(&w, &delta, -eta)
}

/// Result of one exact gradient step on both factors.
#[derive(Clone, Debug)]
pub struct TwoLayerStep {
    pub w1: Matrix,
    pub w2: Matrix,
    /// `w1 * w2` after the step.
    pub collapsed: Matrix,
}

/// One SGD step on each factor with the layer gradients
/// `dL/dW1 = G W2^T` and `dL/dW2 = W1^T G`, both taken at the current point.
///
/// The collapsed product differs from [`mlet_effective_update`] by exactly
/// [`second_order_term`].
pub fn two_layer_sgd_step(
    w1: &Matrix,
    w2: &Matrix,
    grad: &SparseGradient,
    eta: f64,
) -> Result<TwoLayerStep> {
    check_factors("two_layer_sgd_step", w1, w2, grad)?;
    check_eta(eta)?;
    let dw1 = grad_times_w2t(grad, w2);
    let new_w1 = scale_add(w1, &dw1, -eta)?;
    let mut new_w2 = w2.clone();
    for (c, g) in grad.iter() {
        let step = mat_t_vec(w1, g);
        for (r, s) in step.iter().enumerate() {
            new_w2[(r, c)] -= eta * s;
        }
    }
    let new_w2 = finite(new_w2, "two_layer_sgd_step")?;
    let collapsed = matmul(&new_w1, &new_w2)?;
    Ok(TwoLayerStep {
        w1: new_w1,
        w2: new_w2,
        collapsed,
    })
}

/// `eta^2 * (G W2^T)(W1^T G)`, the term dropped by the first-order update.
pub fn second_order_term(
    w1: &Matrix,
    w2: &Matrix,
    grad: &SparseGradient,
    eta: f64,
) -> Result<Matrix> {
    check_factors("second_order_term", w1, w2, grad)?;
    let gw2t = grad_times_w2t(grad, w2);
    let mut w1tg = Matrix::zeros(w1.cols(), grad.n());
    for (c, g) in grad.iter() {
        w1tg.set_col(c, &mat_t_vec(w1, g));
    }
    Ok(matmul(&gw2t, &w1tg)?.scale(eta * eta))
}

/// `G W2^T` (d x k) as a sum of outer products over stored columns.
fn grad_times_w2t(grad: &SparseGradient, w2: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(grad.d(), w2.rows());
    for (c, g) in grad.iter() {
        for (i, gi) in g.iter().enumerate() {
            let row = out.row_mut(i);
            for (r, o) in row.iter_mut().enumerate() {
                *o += gi * w2[(r, c)];
            }
        }
    }
    out
}

pub(crate) fn mat_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn mat_t_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (i, xi) in x.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(m.row(i)) {
            *o += a * xi;
        }
    }
    out
}

fn check_factors(op: &'static str, w1: &Matrix, w2: &Matrix, grad: &SparseGradient) -> Result<()> {
    if w1.cols() != w2.rows() {
        return Err(MletError::DimensionMismatch {
            op,
            left: w1.shape(),
            right: w2.shape(),
        });
    }
    grad.check_shape(op, w1.rows(), w2.cols())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(MletError::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    Ok(())
}

fn finite(m: Matrix, op: &'static str) -> Result<Matrix> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(MletError::NonFinite(op))
    }
}
