use serde::{Deserialize, Serialize};

use super::SslError;
use crate::linalg::{dot, procrustes_align, Matrix};

/// Loss terms of one training step: `total = contrastive + lambda · regularizer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub regularizer: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(contrastive: f64, regularizer: f64, lambda: f64) -> Self {
        Self {
            contrastive,
            regularizer,
            total: contrastive + lambda * regularizer,
            lambda,
        }
    }

    /// Mean of several breakdowns; `lambda` is taken from the first.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let c = items.iter().map(|b| b.contrastive).sum::<f64>() / n;
        let r = items.iter().map(|b| b.regularizer).sum::<f64>() / n;
        let t = items.iter().map(|b| b.total).sum::<f64>() / n;
        Some(LossBreakdown {
            contrastive: c,
            regularizer: r,
            total: t,
            lambda: first.lambda,
        })
    }
}

/// Normalised-temperature contrastive loss over paired views.
///
/// Rows `2k` and `2k+1` are the two views of sample `k`. For each of the
/// 2m anchors the positive is its partner row and the denominator sums over
/// every other row; the result is the mean over anchors. Returns the loss
/// and its gradient with respect to `z_views`.
pub fn contrastive_loss(z_views: &Matrix, tau: f64) -> Result<(f64, Matrix), SslError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(SslError::BadTemperature(tau));
    }
    let (n, d) = z_views.shape();
    if n < 2 || n % 2 != 0 {
        return Err(SslError::Shape(format!(
            "contrastive loss needs an even number (>= 2) of rows, got {n}"
        )));
    }
    let norms: Vec<f64> = (0..n).map(|i| dot(z_views.row(i), z_views.row(i)).sqrt()).collect();
    if let Some(row) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(SslError::ZeroNormRow(row));
    }
    let unit = Matrix::from_fn(n, d, |i, j| z_views[(i, j)] / norms[i]);
    let sim = unit.matmul_t(&unit)?;

    // g[i][k] = ∂loss/∂sim(i,k) from anchor i's term.
    let mut g = Matrix::zeros(n, n);
    let mut loss = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let pos = i ^ 1;
        let row = sim.row(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .fold(f64::NEG_INFINITY, |m, (_, &s)| m.max(s / tau));
        let sum: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| (s / tau - max).exp())
            .sum();
        let lse = max + sum.ln();
        loss += lse - row[pos] / tau;
        for k in 0..n {
            if k == i {
                continue;
            }
            let p = (row[k] / tau - lse).exp();
            let target = if k == pos { 1.0 } else { 0.0 };
            g[(i, k)] = (p - target) * scale;
        }
    }
    loss /= n as f64;

    // sim is symmetric, so ∂/∂unit_i = Σ_k (g_ik + g_ki) unit_k.
    let sym = g.add(&g.transpose())?;
    let d_unit = sym.matmul(&unit)?;
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let u = unit.row(i);
        let gu = d_unit.row(i);
        let radial = dot(gu, u);
        for j in 0..d {
            grad[(i, j)] = (gu[j] - radial * u[j]) / norms[i];
        }
    }
    Ok((loss, grad))
}

/// How the recreation residual enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualForm {
    /// `‖z − Q*R‖_F²`
    Squared,
    /// `‖z − Q*R‖_F`
    Plain,
}

/// Recreation regulariser: how well `z` can be rebuilt from a peer's
/// correlation matrix through the best orthonormal basis.
///
/// The gradient holds `Q*` fixed. Since `Q*` minimises the residual over the
/// constraint set, this is also the gradient of the optimal value wherever
/// the minimiser is unique.
pub fn foa_regularizer(
    z: &Matrix,
    r_bar_peer: &Matrix,
    form: ResidualForm,
) -> Result<(f64, Matrix), SslError> {
    let sol = procrustes_align(z, r_bar_peer)?;
    let diff = z.sub(&sol.q_star.matmul(r_bar_peer)?)?;
    Ok(match form {
        ResidualForm::Squared => (sol.residual * sol.residual, diff.scale(2.0)),
        ResidualForm::Plain => {
            if sol.residual == 0.0 {
                (0.0, Matrix::zeros(z.rows(), z.cols()))
            } else {
                (sol.residual, diff.scale(1.0 / sol.residual))
            }
        }
    })
}
