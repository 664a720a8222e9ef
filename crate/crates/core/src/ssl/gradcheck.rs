use super::{EncoderModel, SslError};
use crate::linalg::Matrix;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares backprop gradients of `loss_fn ∘ forward` with central
/// differences over every parameter.
///
/// `loss_fn` maps the projection output to `(loss, ∂loss/∂z)`. Parameters
/// whose ±step flips the sign of any ReLU pre-activation are skipped, since
/// the loss is not differentiable there. The denominator floor is
/// `1e-6 · max(1, |loss|)`, which keeps roundoff in near-zero gradients
/// from dominating the ratio.
pub fn gradient_check<F>(
    model: &EncoderModel,
    batch: &Matrix,
    mut loss_fn: F,
) -> Result<GradCheckReport, SslError>
where
    F: FnMut(&Matrix) -> Result<(f64, Matrix), SslError>,
{
    let (z, acts) = model.forward(batch)?;
    let (loss, upstream) = loss_fn(&z)?;
    let analytic = model.backward(&acts, &upstream)?.flatten();
    let pattern = acts.relu_pattern(model);
    let floor = 1e-6 * loss.abs().max(1.0);

    let base = model.parameters();
    let mut probe = model.clone();
    let mut eval = |params: &[f64]| -> Result<(f64, Vec<bool>), SslError> {
        probe.set_parameters(params)?;
        let (z, acts) = probe.forward(batch)?;
        let pat = acts.relu_pattern(&probe);
        Ok((loss_fn(&z)?.0, pat))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut params = base.clone();
    for (idx, &a) in analytic.iter().enumerate() {
        params[idx] = base[idx] + FD_STEP;
        let (up, pat_up) = eval(&params)?;
        params[idx] = base[idx] - FD_STEP;
        let (down, pat_down) = eval(&params)?;
        params[idx] = base[idx];
        if pat_up != pattern || pat_down != pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = a.abs().max(numeric.abs()).max(floor);
        let rel = (a - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Central-difference gradient of a scalar function of a matrix.
pub fn numeric_matrix_gradient<F>(x: &Matrix, mut f: F) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.as_slice().len() {
        let orig = x.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + FD_STEP;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - FD_STEP;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        out.as_mut_slice()[idx] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::{Activation, DenseLayer};

    #[test]
    fn linear_model_quadratic_loss_is_exact() {
        let w = Matrix::from_fn(3, 2, |i, j| 0.3 * i as f64 - 0.7 * j as f64 + 0.1);
        let cal = DenseLayer::new(w, vec![0.05, -0.1], Activation::Identity).unwrap();
        let model = EncoderModel::new("lin", vec![], cal).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| ((i * 2 + j) as f64).cos());
        let target = Matrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.2);
        let report = gradient_check(&model, &x, |z| {
            let diff = z.sub(&target)?;
            Ok((0.5 * diff.frobenius_norm().powi(2), diff))
        })
        .unwrap();
        assert_eq!(report.skipped, 0);
        assert_eq!(report.checked, model.param_count());
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
    }
}
