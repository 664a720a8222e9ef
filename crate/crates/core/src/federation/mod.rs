//! The federated protocol: memory bank, per-client rounds with warm-up and
//! trace gating, the round loop, a FedAvg baseline and traffic accounting.

mod bank;
mod client;
mod simulator;

pub use bank::{BankView, BoundaryPayload, MemoryBank, BOUNDARY_TYPES};
pub use client::{
    client_local_round, fedfoa_loss_terms, fedfoa_loss_terms_sampled, ClientRoundOutput,
    ClientState, FoaTerms,
};
pub use simulator::{run_training, ClientMetrics, RoundReport, Simulator};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::correlation::{record_wire_size, ClientId, CorrelationError};
use crate::linalg::LinalgError;
use crate::ssl::{EncoderModel, SslError};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("round {round}, client {client}: {source}")]
    ClientFailed {
        round: u32,
        client: ClientId,
        #[source]
        source: Box<FederationError>,
    },
    #[error("client {client} committed round {offered} after round {previous}")]
    StaleCommit {
        client: ClientId,
        previous: u32,
        offered: u32,
    },
    #[error("peer {peer} published a {peer_dim}x{peer_dim} correlation, local projection has {own_dim} dims")]
    PeerDimension {
        peer: ClientId,
        peer_dim: usize,
        own_dim: usize,
    },
    #[error("client {0} has an empty partition")]
    EmptyPartition(ClientId),
    #[error("fedavg needs identical architectures: {0}")]
    Heterogeneous(String),
    #[error("aggregation weights: {0}")]
    BadWeights(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Weighted parameter average of same-architecture models.
pub fn fedavg_aggregate(
    models: &[EncoderModel],
    weights: &[f64],
) -> Result<EncoderModel, FederationError> {
    let first = models
        .first()
        .ok_or_else(|| FederationError::BadWeights("no models".into()))?;
    if weights.len() != models.len() {
        return Err(FederationError::BadWeights(format!(
            "{} weights for {} models",
            weights.len(),
            models.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(FederationError::BadWeights("weights must be finite and >= 0".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FederationError::BadWeights(format!("weights sum to {sum}, not 1")));
    }
    let shape = |m: &EncoderModel| -> Vec<(usize, usize)> {
        m.all_layers().map(|l| l.weight.shape()).collect()
    };
    let reference = shape(first);
    for m in models {
        if m.arch_id() != first.arch_id() || shape(m) != reference {
            return Err(FederationError::Heterogeneous(format!(
                "`{}` vs `{}`",
                first.arch_id(),
                m.arch_id()
            )));
        }
    }
    let mut acc = vec![0.0; first.param_count()];
    for (m, &w) in models.iter().zip(weights) {
        for (a, p) in acc.iter_mut().zip(m.parameters()) {
            *a += w * p;
        }
    }
    let mut out = first.clone();
    out.set_parameters(&acc)?;
    Ok(out)
}

/// Upload granularity for correlation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    /// One averaged record per round.
    RoundWise,
    /// One record per local batch.
    BatchWise,
}

/// Bytes a client uploads per round under `mode`.
pub fn comm_cost(cfg: &RunConfig, mode: CommMode) -> u64 {
    let per_record = record_wire_size(cfg.projection_dim) as u64;
    match mode {
        CommMode::RoundWise => per_record,
        CommMode::BatchWise => per_record * cfg.batches_per_round as u64,
    }
}
