use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::bank::BankView;
use super::FederationError;
use crate::config::RunConfig;
use crate::correlation::{extract_correlation, independence_trace, ClientId, CorrelationRecord};
use crate::data::{two_view_augment, Partition};
use crate::linalg::{dot, Matrix};
use crate::ssl::{contrastive_loss, foa_regularizer, EncoderModel, LossBreakdown, ResidualForm};

/// Regularisation contributed by gate-passing peers for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FoaTerms {
    /// `λ · Σ ℓ_A` over peers that passed the gate.
    pub loss: f64,
    /// `Σ ℓ_A` (unweighted).
    pub regularizer: f64,
    /// Gradient of `loss` with respect to `z`.
    pub grad: Matrix,
    pub peers_used: usize,
}

impl FoaTerms {
    fn zero(shape: (usize, usize)) -> Self {
        Self {
            loss: 0.0,
            regularizer: 0.0,
            grad: Matrix::zeros(shape.0, shape.1),
            peers_used: 0,
        }
    }
}

fn accumulate<'a>(
    z: &Matrix,
    own_trace: f64,
    peers: impl Iterator<Item = &'a CorrelationRecord>,
    lambda: f64,
    form: ResidualForm,
) -> Result<FoaTerms, FederationError> {
    let mut out = FoaTerms::zero(z.shape());
    for peer in peers {
        if peer.dim() != z.cols() {
            return Err(FederationError::PeerDimension {
                peer: peer.client_id(),
                peer_dim: peer.dim(),
                own_dim: z.cols(),
            });
        }
        if peer.trace() <= own_trace {
            continue;
        }
        let (l, g) = foa_regularizer(z, peer.r_bar(), form)?;
        out.loss += lambda * l;
        out.regularizer += l;
        out.grad.axpy(lambda, &g)?;
        out.peers_used += 1;
    }
    Ok(out)
}

/// Trace-gated recreation terms against every peer in the bank.
///
/// A peer contributes `λ·ℓ_A(z, R̄_peer)` only when its stored trace is
/// strictly greater than the trace of this batch's own R.
pub fn fedfoa_loss_terms(
    z: &Matrix,
    r_own: &Matrix,
    bank: &BankView<'_>,
    self_id: ClientId,
    lambda: f64,
    form: ResidualForm,
) -> Result<FoaTerms, FederationError> {
    let own = independence_trace(r_own)?;
    accumulate(z, own, bank.peers(self_id), lambda, form)
}

/// As [`fedfoa_loss_terms`] but over `k` peers drawn at random first.
pub fn fedfoa_loss_terms_sampled(
    z: &Matrix,
    r_own: &Matrix,
    bank: &BankView<'_>,
    self_id: ClientId,
    lambda: f64,
    form: ResidualForm,
    k: usize,
    rng: &mut impl Rng,
) -> Result<FoaTerms, FederationError> {
    let own = independence_trace(r_own)?;
    let mut chosen = bank.peers(self_id).choose_multiple(rng, k);
    chosen.sort_by_key(|r| r.client_id());
    accumulate(z, own, chosen.into_iter(), lambda, form)
}

/// One client: its private model, data and randomness.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: ClientId,
    pub(crate) model: EncoderModel,
    partition: Partition,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_rs: Vec<Matrix>,
}

/// What one client produced in one round.
#[derive(Debug, Clone)]
pub struct ClientRoundOutput {
    /// The only value that leaves the client.
    pub record: CorrelationRecord,
    pub losses: Vec<LossBreakdown>,
    pub peers_used: usize,
    /// Diagonal of every batch's R, in batch order.
    pub batch_diagonals: Vec<Vec<f64>>,
}

impl ClientRoundOutput {
    pub fn mean_losses(&self) -> LossBreakdown {
        LossBreakdown::mean(&self.losses).expect("at least one batch per round")
    }
}

impl ClientState {
    pub fn new(
        id: ClientId,
        model: EncoderModel,
        partition: Partition,
        rng: ChaCha8Rng,
    ) -> Result<Self, FederationError> {
        if partition.is_empty() {
            return Err(FederationError::EmptyPartition(id));
        }
        if partition.input_dim() != model.input_dim() {
            return Err(FederationError::Config(format!(
                "client {id}: data width {} does not match model input {}",
                partition.input_dim(),
                model.input_dim()
            )));
        }
        let order = (0..partition.len()).collect();
        Ok(Self {
            id,
            model,
            partition,
            rng,
            order,
            cursor: usize::MAX,
            batch_rs: Vec::new(),
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Per-batch R matrices of the most recent round.
    pub fn batch_rs(&self) -> &[Matrix] {
        &self.batch_rs
    }

    /// Next `m` local sample positions; reshuffles on every pass.
    fn next_batch(&mut self, m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (m - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

fn normalize_rows(z: &Matrix) -> (Matrix, Vec<f64>) {
    let norms: Vec<f64> = (0..z.rows()).map(|i| dot(z.row(i), z.row(i)).sqrt()).collect();
    let unit = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
        if norms[i] > 0.0 {
            z[(i, j)] / norms[i]
        } else {
            0.0
        }
    });
    (unit, norms)
}

/// Pulls a gradient on row-normalised features back onto the raw rows.
fn normalize_rows_backward(unit: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    Matrix::from_fn(g.rows(), g.cols(), |i, j| {
        if norms[i] == 0.0 {
            return 0.0;
        }
        let radial = dot(g.row(i), unit.row(i));
        (g[(i, j)] - radial * unit[(i, j)]) / norms[i]
    })
}

/// Runs `B` local SGD steps for round `round` and publishes the round-mean R.
///
/// Every batch computes the projection `Z`, its R factor and the
/// contrastive loss. After warm-up (`round > t_warm`) and when the run
/// exchanges correlations, trace-gated recreation terms against the
/// bank's previous-round records are added before the step.
pub fn client_local_round(
    state: &mut ClientState,
    bank: &BankView<'_>,
    cfg: &RunConfig,
    round: u32,
) -> Result<ClientRoundOutput, FederationError> {
    state.batch_rs.clear();
    let regularize = cfg.exchanges_correlations() && round > cfg.t_warm;
    let form = cfg.residual_form();
    let lambda = if cfg.exchanges_correlations() { cfg.lambda } else { 0.0 };
    let mut losses = Vec::with_capacity(cfg.batches_per_round);
    let mut diagonals = Vec::with_capacity(cfg.batches_per_round);
    let mut peers_used = 0;

    for _ in 0..cfg.batches_per_round {
        let idx = state.next_batch(cfg.batch_size);
        let x = state.partition.gather(&idx);
        let views = two_view_augment(&x, &cfg.augment, state.partition.image_shape(), &mut state.rng);
        let (z, acts) = state.model.forward(&views)?;

        let normalized = cfg.normalize_before_qr.then(|| normalize_rows(&z));
        let zq = normalized.as_ref().map_or(&z, |(u, _)| u);
        let r = extract_correlation(zq)?;
        diagonals.push(r.diagonal());

        let (l_c, mut grad) = contrastive_loss(&z, cfg.tau)?;
        let mut reg = 0.0;
        if regularize {
            let terms = match cfg.peers_per_batch {
                None => fedfoa_loss_terms(zq, &r, bank, state.id, cfg.lambda, form)?,
                Some(k) => fedfoa_loss_terms_sampled(
                    zq,
                    &r,
                    bank,
                    state.id,
                    cfg.lambda,
                    form,
                    k,
                    &mut state.rng,
                )?,
            };
            if terms.peers_used > 0 {
                let g = match &normalized {
                    Some((unit, norms)) => normalize_rows_backward(unit, norms, &terms.grad),
                    None => terms.grad,
                };
                grad.axpy(1.0, &g)?;
            }
            reg = terms.regularizer;
            peers_used += terms.peers_used;
        }
        losses.push(LossBreakdown::new(l_c, reg, lambda));
        state.model.backward_and_step(&acts, &grad, cfg.lr)?;
        state.batch_rs.push(r);
    }

    let record = CorrelationRecord::from_batches(state.id, round, &state.batch_rs)?;
    Ok(ClientRoundOutput {
        record,
        losses,
        peers_used,
        batch_diagonals: diagonals,
    })
}
