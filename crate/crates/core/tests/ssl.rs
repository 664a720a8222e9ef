mod common;

use common::{composite_gradient_trial, gaussian};
use fedfoa::data::seeded_rng;
use fedfoa::linalg::{qr_decompose, Matrix};
use fedfoa::ssl::{
    contrastive_loss, foa_regularizer, gradient_check, numeric_matrix_gradient, ArchSpec, EncoderModel,
    LossBreakdown, ResidualForm,
};
use proptest::prelude::*;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs() / a.max_abs().max(b.max_abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn contrastive_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let z = gaussian(8, 4, &mut seeded_rng(seed, 0));
        let (a, _) = contrastive_loss(&z, 0.5).unwrap();
        let (b, _) = contrastive_loss(&z.scale(scale), 0.5).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn contrastive_is_pair_permutation_invariant(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 1);
        let z = gaussian(10, 3, &mut rng);
        let mut pairs: Vec<usize> = (0..5).collect();
        rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut rng);
        let permuted = Matrix::from_fn(10, 3, |i, j| z[(2 * pairs[i / 2] + i % 2, j)]);
        let (a, _) = contrastive_loss(&z, 0.3).unwrap();
        let (b, _) = contrastive_loss(&permuted, 0.3).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_differences(seed in any::<u64>(), tau in 0.1f64..2.0) {
        let z = gaussian(6, 3, &mut seeded_rng(seed, 2));
        let (_, g) = contrastive_loss(&z, tau).unwrap();
        let n = numeric_matrix_gradient(&z, |x| contrastive_loss(x, tau).unwrap().0);
        prop_assert!(rel(&g, &n) <= 1e-4);
    }

    #[test]
    fn regularizer_gradient_matches_differences(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 3);
        let z = gaussian(10, 3, &mut rng);
        let r = qr_decompose(&gaussian(10, 3, &mut rng)).unwrap().r;
        for form in [ResidualForm::Squared, ResidualForm::Plain] {
            let (_, g) = foa_regularizer(&z, &r, form).unwrap();
            let n = numeric_matrix_gradient(&z, |x| foa_regularizer(x, &r, form).unwrap().0);
            prop_assert!(rel(&g, &n) <= 1e-4);
        }
    }

    #[test]
    fn regularizer_is_rotation_invariant(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 4);
        let z = gaussian(12, 4, &mut rng);
        let r = qr_decompose(&gaussian(12, 4, &mut rng)).unwrap().r;
        let rot = qr_decompose(&gaussian(12, 12, &mut rng)).unwrap().q;
        let (a, _) = foa_regularizer(&z, &r, ResidualForm::Squared).unwrap();
        let (b, _) = foa_regularizer(&rot.matmul(&z).unwrap(), &r, ResidualForm::Squared).unwrap();
        prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a));
    }

    #[test]
    fn regularizer_step_descends(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, 5);
        let z = gaussian(10, 3, &mut rng);
        let r = qr_decompose(&gaussian(10, 3, &mut rng)).unwrap().r;
        let (before, g) = foa_regularizer(&z, &r, ResidualForm::Squared).unwrap();
        let stepped = z.sub(&g.scale(1e-3)).unwrap();
        let (after, _) = foa_regularizer(&stepped, &r, ResidualForm::Squared).unwrap();
        prop_assert!(after < before || before < 1e-12);
    }
}

#[test]
fn regularizer_vanishes_on_exact_recreation() {
    let mut rng = seeded_rng(6, 0);
    let q = qr_decompose(&gaussian(9, 3, &mut rng)).unwrap().q;
    let r = qr_decompose(&gaussian(9, 3, &mut rng)).unwrap().r;
    let z = q.matmul(&r).unwrap();
    let (loss, grad) = foa_regularizer(&z, &r, ResidualForm::Squared).unwrap();
    assert!(loss < 1e-18);
    assert!(grad.max_abs() < 1e-8);
}

#[test]
fn breakdown_total_is_exact() {
    let b = LossBreakdown::new(1.25, 3.5, 0.01);
    assert_eq!(b.total, 1.25 + 0.01 * 3.5);
}

#[test]
fn two_layer_relu_contrastive_gradcheck() {
    for seed in 0..5 {
        let mut rng = seeded_rng(seed, 8);
        let model = EncoderModel::init(&ArchSpec::new("two", vec![6]), 5, 3, &mut rng);
        let batch = gaussian(8, 5, &mut rng);
        let report = gradient_check(&model, &batch, |z| contrastive_loss(z, 0.5)).unwrap();
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
        assert!(report.checked > report.skipped);
    }
}

#[test]
fn composite_loss_gradcheck_with_open_gate() {
    for seed in 0..5 {
        let (report, peers) = composite_gradient_trial(seed);
        assert_eq!(peers, 2, "gate should be open for both peers");
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn checkpoint_roundtrip_preserves_forward() {
    let mut rng = seeded_rng(3, 3);
    for arch in ArchSpec::zoo() {
        let model = EncoderModel::init(&arch, 8, 4, &mut rng);
        let back = EncoderModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back, model);
        let x = gaussian(5, 8, &mut rng);
        assert_eq!(back.forward(&x).unwrap().0, model.forward(&x).unwrap().0);
    }
    let bytes = EncoderModel::init(&ArchSpec::zoo()[0], 8, 4, &mut rng).to_checkpoint();
    assert!(EncoderModel::from_checkpoint(&bytes[..bytes.len() - 3]).is_err());
}

