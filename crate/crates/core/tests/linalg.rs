use fedfoa::data::seeded_rng;
use fedfoa::linalg::{procrustes_align, qr_decompose, thin_svd, Matrix};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn shape_and_seed() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=12, 0usize..=20, any::<u64>()).prop_map(|(n, extra, s)| (n + extra, n, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qr_factorisation_properties((m, n, seed) in shape_and_seed()) {
        let a = gaussian(m, n, &mut seeded_rng(seed, 0));
        let f = qr_decompose(&a).unwrap();
        prop_assert_eq!(f.q.shape(), (m, n));
        prop_assert_eq!(f.r.shape(), (n, n));
        prop_assert!(rel_err(&f.q.matmul(&f.r).unwrap(), &a) <= 1e-10);
        prop_assert!(f.q.orthonormality_error() <= 1e-10);
        prop_assert!(f.r.is_upper_triangular());
        prop_assert!(f.r.diagonal().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn qr_r_matches_gram_cholesky((m, n, seed) in shape_and_seed()) {
        // RᵀR = AᵀA, and with a positive diagonal R is the Cholesky factor.
        let a = gaussian(m, n, &mut seeded_rng(seed, 0));
        let r = qr_decompose(&a).unwrap().r;
        let gram = a.t_matmul(&a).unwrap();
        let chol = cholesky_upper(&gram);
        prop_assert!(r.max_abs_diff(&chol).unwrap() <= 1e-8 * (1.0 + chol.max_abs()));
    }

    #[test]
    fn svd_properties(m in 1usize..=24, n in 1usize..=24, seed in any::<u64>()) {
        let a = gaussian(m, n, &mut seeded_rng(seed, 1));
        let s = thin_svd(&a).unwrap();
        let k = m.min(n);
        prop_assert_eq!(s.sigma.len(), k);
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
        prop_assert!(rel_err(&s.reconstruct(), &a) <= 1e-9);
        prop_assert!(s.u.orthonormality_error() <= 1e-9);
        prop_assert!(s.v.orthonormality_error() <= 1e-9);
        // ‖A‖_F² = Σσ²
        let ss: f64 = s.sigma.iter().map(|x| x * x).sum();
        prop_assert!((ss - a.frobenius_norm().powi(2)).abs() <= 1e-9 * ss.max(1.0));
    }

    #[test]
    fn procrustes_residual_trace_identity(m in 4usize..=20, n in 1usize..=4, seed in any::<u64>()) {
        // ‖Z − Q*R‖² = ‖Z‖² + ‖R‖² − 2·Σσ(R·Zᵀ)
        let mut rng = seeded_rng(seed, 2);
        let z = gaussian(m, n, &mut rng);
        let r = gaussian(n, n, &mut rng);
        let sol = procrustes_align(&z, &r).unwrap();
        let nuclear: f64 = thin_svd(&r.matmul_t(&z).unwrap()).unwrap().sigma.iter().sum();
        let expected = z.frobenius_norm().powi(2) + r.frobenius_norm().powi(2) - 2.0 * nuclear;
        prop_assert!((sol.residual.powi(2) - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        prop_assert!(sol.q_star.orthonormality_error() <= 1e-9);
    }

    #[test]
    fn procrustes_beats_random_candidates(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 3);
        let z = gaussian(16, 4, &mut rng);
        let r = gaussian(4, 4, &mut rng);
        let best = procrustes_align(&z, &r).unwrap();
        for _ in 0..200 {
            let q = qr_decompose(&gaussian(16, 4, &mut rng)).unwrap().q;
            let res = z.sub(&q.matmul(&r).unwrap()).unwrap().frobenius_norm();
            prop_assert!(best.residual <= res + 1e-9);
        }
    }

    #[test]
    fn procrustes_absorbs_rotations(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 4);
        let z = gaussian(12, 3, &mut rng);
        let r = qr_decompose(&gaussian(12, 3, &mut rng)).unwrap().r;
        let rot = qr_decompose(&gaussian(12, 12, &mut rng)).unwrap().q;
        let a = procrustes_align(&z, &r).unwrap().residual;
        let b = procrustes_align(&rot.matmul(&z).unwrap(), &r).unwrap().residual;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }
}

fn cholesky_upper(g: &Matrix) -> Matrix {
    let n = g.rows();
    let mut r = Matrix::zeros(n, n);
    let mut data = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..=j {
            let s: f64 = (0..i).map(|k| data[k * n + i] * data[k * n + j]).sum();
            data[i * n + j] = if i == j {
                (g[(j, j)] - s).max(0.0).sqrt()
            } else {
                (g[(i, j)] - s) / data[i * n + i]
            };
        }
    }
    r.as_mut_slice().copy_from_slice(&data);
    r
}

#[test]
fn qr_of_rank_deficient_input_keeps_contract() {
    let base = gaussian(20, 3, &mut seeded_rng(9, 0));
    let a = Matrix::from_fn(20, 5, |i, j| match j {
        3 => base[(i, 0)] + base[(i, 1)],
        4 => 2.0 * base[(i, 2)],
        _ => base[(i, j)],
    });
    let f = qr_decompose(&a).unwrap();
    assert!(rel_err(&f.q.matmul(&f.r).unwrap(), &a) <= 1e-10);
    assert!(f.q.orthonormality_error() <= 1e-10);
    assert!(f.r[(3, 3)].abs() < 1e-10 && f.r[(4, 4)].abs() < 1e-10);
}

#[test]
fn svd_of_rank_one_matrix() {
    let u = [1.0, 2.0, 2.0];
    let v = [3.0, 0.0, 4.0, 0.0];
    let a = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
    let s = thin_svd(&a).unwrap();
    assert!((s.sigma[0] - 15.0).abs() < 1e-12);
    assert!(s.sigma[1..].iter().all(|&x| x < 1e-12));
    assert!(s.u.orthonormality_error() < 1e-10);
    assert!(s.v.orthonormality_error() < 1e-10);
}
