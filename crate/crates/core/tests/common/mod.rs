#![allow(dead_code)]

use fedfoa::correlation::ClientId;
use fedfoa::data::seeded_rng;
use fedfoa::federation::{fedfoa_loss_terms, MemoryBank};
use fedfoa::linalg::{qr_decompose, Matrix};
use fedfoa::ssl::{contrastive_loss, gradient_check, ArchSpec, EncoderModel, GradCheckReport, ResidualForm, SslError};
use fedfoa::CorrelationRecord;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Contrastive loss plus gate-passing recreation terms, with `R_own` taken
/// from the QR factor of `z` itself, as during training.
pub fn composite_loss(
    z: &Matrix,
    tau: f64,
    bank: &MemoryBank,
    round: u32,
    lambda: f64,
) -> Result<(f64, Matrix, usize), SslError> {
    let (lc, mut grad) = contrastive_loss(z, tau)?;
    let r_own = qr_decompose(z)?.r;
    let terms = fedfoa_loss_terms(z, &r_own, &bank.view(round), ClientId(0), lambda, ResidualForm::Squared)
        .map_err(|e| SslError::Shape(e.to_string()))?;
    grad.axpy(1.0, &terms.grad)?;
    Ok((lc + terms.loss, grad, terms.peers_used))
}

/// Gradient check of the composite loss on a random 3-layer model whose
/// bank holds two peers with large traces, so the gate is open.
pub fn composite_gradient_trial(seed: u64) -> (GradCheckReport, usize) {
    let mut rng = seeded_rng(seed, 77);
    let d = 3;
    let arch = ArchSpec::new("trial", vec![10, 8]);
    // Redraw until no sample hits an all-dead hidden layer (a zero row of z).
    let (model, batch) = loop {
        let model = EncoderModel::init(&arch, 4, d, &mut rng);
        let batch = gaussian(8, 4, &mut rng);
        let z = model.forward(&batch).unwrap().0;
        if (0..z.rows()).all(|i| z.row(i).iter().any(|&v| v != 0.0)) {
            break (model, batch);
        }
    };
    let mut bank = MemoryBank::new();
    let peers: Vec<CorrelationRecord> = (1..=2)
        .map(|id| {
            let r = qr_decompose(&gaussian(8, d, &mut rng).scale(20.0)).unwrap().r;
            CorrelationRecord::new(ClientId(id), 1, r, 1).unwrap()
        })
        .collect();
    bank.commit(peers).unwrap();
    let (z, _) = model.forward(&batch).unwrap();
    let (_, _, used) = composite_loss(&z, 0.5, &bank, 2, 0.05).unwrap();
    let report = gradient_check(&model, &batch, |z| {
        composite_loss(z, 0.5, &bank, 2, 0.05).map(|(l, g, _)| (l, g))
    })
    .unwrap();
    (report, used)
}
