use super::{LinalgError, Matrix};

/// Thin QR factors with a non-negative diagonal on `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    /// m×n, orthonormal columns.
    pub q: Matrix,
    /// n×n, upper triangular, diagonal ≥ 0.
    pub r: Matrix,
}

/// Householder thin QR of an m×n matrix with m ≥ n.
///
/// Signs are normalised afterwards so that every diagonal entry of `r` is
/// non-negative, which makes the factorisation unique for full-rank input.
/// Rank-deficient input is accepted and yields zero (or roundoff-sized)
/// diagonal entries.
pub fn qr_decompose(z: &Matrix) -> Result<QrFactors, LinalgError> {
    let (m, n) = z.shape();
    if m < n {
        return Err(LinalgError::TooFewRows { rows: m, cols: n });
    }
    if !z.is_finite() {
        return Err(LinalgError::NonFiniteInput("qr_decompose"));
    }

    let mut a = z.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut diag = vec![0.0; n];

    for k in 0..n {
        let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let x0 = a[(k, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vnorm);

        // Column k becomes alpha·e_k exactly.
        a[(k, k)] = alpha;
        for i in k + 1..m {
            a[(i, k)] = 0.0;
        }
        diag[k] = alpha;
        for j in k + 1..n {
            let proj: f64 = (k..m).map(|i| v[i - k] * a[(i, j)]).sum();
            for i in k..m {
                a[(i, j)] -= 2.0 * proj * v[i - k];
            }
        }
        reflectors.push(Some(v));
    }

    // Accumulate Q = H_0 H_1 ... H_{n-1} · I[:, 0..n] from the right end.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        for j in 0..n {
            let proj: f64 = (k..m).map(|i| v[i - k] * q[(i, j)]).sum();
            if proj == 0.0 {
                continue;
            }
            for i in k..m {
                q[(i, j)] -= 2.0 * proj * v[i - k];
            }
        }
    }

    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r[(i, j)] = a[(i, j)];
        }
        r[(i, i)] = diag[i];
    }

    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }

    Ok(QrFactors { q, r })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classical Gram–Schmidt, used only as an independent oracle.
    fn gram_schmidt(z: &Matrix) -> (Matrix, Matrix) {
        let (m, n) = z.shape();
        let mut q = Matrix::zeros(m, n);
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            let mut v = z.column(j);
            for k in 0..j {
                let qk = q.column(k);
                let c: f64 = qk.iter().zip(z.column(j)).map(|(a, b)| a * b).sum();
                r[(k, j)] = c;
                for i in 0..m {
                    v[i] -= c * qk[i];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            r[(j, j)] = norm;
            if norm > 1e-14 {
                for i in 0..m {
                    q[(i, j)] = v[i] / norm;
                }
            }
        }
        (q, r)
    }

    #[test]
    fn identity_factors_to_identity() {
        let f = qr_decompose(&Matrix::identity(4)).unwrap();
        assert_eq!(f.q, Matrix::identity(4));
        assert_eq!(f.r, Matrix::identity(4));
    }

    #[test]
    fn two_by_two_matches_gram_schmidt() {
        let z = Matrix::from_rows(&[[3.0, 1.0], [4.0, 2.0]]).unwrap();
        let (q_gs, r_gs) = gram_schmidt(&z);
        let expected_q = Matrix::from_rows(&[[0.6, -0.8], [0.8, 0.6]]).unwrap();
        let expected_r = Matrix::from_rows(&[[5.0, 2.2], [0.0, 0.4]]).unwrap();
        assert!(q_gs.max_abs_diff(&expected_q).unwrap() < 1e-12);
        assert!(r_gs.max_abs_diff(&expected_r).unwrap() < 1e-12);

        let f = qr_decompose(&z).unwrap();
        assert!(f.q.max_abs_diff(&expected_q).unwrap() < 1e-12);
        assert!(f.r.max_abs_diff(&expected_r).unwrap() < 1e-12);
    }

    #[test]
    fn duplicated_columns_give_zero_trailing_diagonal() {
        let z = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let (_, r_gs) = gram_schmidt(&z);
        assert!(r_gs[(1, 1)].abs() < 1e-12);
        let f = qr_decompose(&z).unwrap();
        assert!(f.r[(1, 1)].abs() < 1e-12);
        assert!(f.r[(1, 1)] >= 0.0);
        assert!((f.r[(0, 0)] - 2f64.sqrt()).abs() < 1e-12);
        let back = f.q.matmul(&f.r).unwrap();
        assert!(back.max_abs_diff(&z).unwrap() < 1e-12);
    }

    #[test]
    fn zero_column_is_not_an_error() {
        let z = Matrix::from_rows(&[[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]).unwrap();
        let f = qr_decompose(&z).unwrap();
        assert_eq!(f.r[(0, 0)], 0.0);
        assert!(f.q.orthonormality_error() < 1e-12);
        assert!(f.q.matmul(&f.r).unwrap().max_abs_diff(&z).unwrap() < 1e-12);
    }

    #[test]
    fn wide_input_is_rejected() {
        let z = Matrix::zeros(2, 3);
        assert_eq!(
            qr_decompose(&z).unwrap_err(),
            LinalgError::TooFewRows { rows: 2, cols: 3 }
        );
    }

    #[test]
    fn repeated_calls_are_bitwise_equal() {
        let z = Matrix::from_fn(9, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7 + 0.1 * j as f64);
        assert_eq!(qr_decompose(&z).unwrap(), qr_decompose(&z).unwrap());
    }
}
