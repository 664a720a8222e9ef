use super::{thin_svd, LinalgError, Matrix};

/// Solution of `min ‖z − Q·r‖_F` over Q with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesSolution {
    /// m×n with orthonormal columns.
    pub q_star: Matrix,
    /// ‖z − q_star·r‖_F.
    pub residual: f64,
}

/// Closed-form orthogonal Procrustes alignment.
///
/// With `r·zᵀ = U Σ Vᵀ` the minimiser is `V·Uᵀ`: it maximises `Tr(r zᵀ Q)`,
/// which is bounded above by `Tr(Σ)`. Zero singular values leave the
/// corresponding columns of U and V as emitted by the SVD; every completion
/// attains the same residual.
pub fn procrustes_align(z: &Matrix, r: &Matrix) -> Result<ProcrustesSolution, LinalgError> {
    let (m, n) = z.shape();
    if m < n {
        return Err(LinalgError::TooFewRows { rows: m, cols: n });
    }
    if r.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch {
            op: "procrustes_align",
            left: z.shape(),
            right: r.shape(),
        });
    }
    let cross = r.matmul_t(z)?; // n×m
    let svd = thin_svd(&cross)?; // u: n×n, v: m×n
    let q_star = svd.v.matmul_t(&svd.u)?;
    let residual = z.sub(&q_star.matmul(r)?)?.frobenius_norm();
    Ok(ProcrustesSolution { q_star, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_decompose;

    #[test]
    fn exact_recreation_has_zero_residual() {
        let q0 = qr_decompose(&Matrix::from_fn(6, 3, |i, j| ((i + 2 * j) % 5) as f64 + 0.3 * j as f64))
            .unwrap()
            .q;
        let r = Matrix::from_rows(&[[2.0, 0.5, -1.0], [0.0, 1.5, 0.2], [0.0, 0.0, 0.7]]).unwrap();
        let z = q0.matmul(&r).unwrap();
        let sol = procrustes_align(&z, &r).unwrap();
        assert!(sol.residual < 1e-10, "residual {}", sol.residual);
        assert!(sol.q_star.matmul(&r).unwrap().max_abs_diff(&z).unwrap() < 1e-10);
        assert!(sol.q_star.orthonormality_error() < 1e-10);
    }

    #[test]
    fn zero_target_returns_norm_of_z() {
        let z = Matrix::from_fn(5, 2, |i, j| i as f64 - 2.0 * j as f64);
        let sol = procrustes_align(&z, &Matrix::zeros(2, 2)).unwrap();
        assert!((sol.residual - z.frobenius_norm()).abs() < 1e-12);
        assert!(sol.q_star.orthonormality_error() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_target() {
        let z = Matrix::zeros(5, 2);
        assert!(matches!(
            procrustes_align(&z, &Matrix::zeros(3, 3)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            procrustes_align(&Matrix::zeros(2, 3), &Matrix::zeros(3, 3)),
            Err(LinalgError::TooFewRows { .. })
        ));
    }
}
