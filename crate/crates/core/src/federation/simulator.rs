use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::MemoryBank;
use super::client::{client_local_round, ClientRoundOutput, ClientState};
use super::{fedavg_aggregate, FederationError};
use crate::config::{Mode, RunConfig};
use crate::correlation::{ClientId, CorrelationRecord};
use crate::data::{seeded_rng, Partition};
use crate::ssl::{ArchSpec, EncoderModel, LossBreakdown};

/// Stream offsets keeping model init and training randomness apart.
const INIT_STREAM: u64 = 1_000;
const TRAIN_STREAM: u64 = 2_000;

/// One client's row in a [`RoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: ClientId,
    pub arch_id: String,
    /// Mean over the round's batches.
    pub losses: LossBreakdown,
    pub trace_rbar: f64,
    pub rbar_diagonal: Vec<f64>,
    pub peers_used: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub clients: Vec<ClientMetrics>,
    pub bytes_uploaded: u64,
    pub bytes_downloaded: u64,
    /// Not exported, so metrics files stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for RoundReport {
    /// Ignores wall time.
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.clients == other.clients
            && self.bytes_uploaded == other.bytes_uploaded
            && self.bytes_downloaded == other.bytes_downloaded
    }
}

impl RoundReport {
    pub fn mean_trace(&self) -> f64 {
        self.clients.iter().map(|c| c.trace_rbar).sum::<f64>() / self.clients.len() as f64
    }
}

/// In-process federation: clients, the memory bank and the round loop.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: RunConfig,
    clients: Vec<ClientState>,
    bank: MemoryBank,
    /// Every record computed, exchanged or not, for distance diagnostics.
    record_log: Vec<CorrelationRecord>,
    round: u32,
}

impl Simulator {
    pub fn new(cfg: &RunConfig, partitions: Vec<Partition>) -> Result<Self, FederationError> {
        cfg.validate()?;
        if partitions.len() != cfg.num_clients {
            return Err(FederationError::Config(format!(
                "{} partitions for {} clients",
                partitions.len(),
                cfg.num_clients
            )));
        }
        let mut clients = Vec::with_capacity(cfg.num_clients);
        let mut shared_init: Option<EncoderModel> = None;
        for (i, part) in partitions.into_iter().enumerate() {
            let id = ClientId(i as u32);
            if part.len() < cfg.batch_size {
                return Err(FederationError::Config(format!(
                    "client {id} holds {} samples, fewer than batch_size {}",
                    part.len(),
                    cfg.batch_size
                )));
            }
            let arch = ArchSpec::lookup(cfg.arch_for(i)).expect("validated");
            let model = match (&shared_init, cfg.mode) {
                (Some(m), Mode::Fedavg) => m.clone(),
                _ => {
                    let mut rng = seeded_rng(cfg.seed, INIT_STREAM + i as u64);
                    EncoderModel::init(&arch, part.input_dim(), cfg.projection_dim, &mut rng)
                }
            };
            if cfg.mode == Mode::Fedavg && shared_init.is_none() {
                shared_init = Some(model.clone());
            }
            let rng = seeded_rng(cfg.seed, TRAIN_STREAM + i as u64);
            clients.push(ClientState::new(id, model, part, rng)?);
        }
        Ok(Self {
            cfg: cfg.clone(),
            clients,
            bank: MemoryBank::new(),
            record_log: Vec::new(),
            round: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn record_log(&self) -> &[CorrelationRecord] {
        &self.record_log
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    /// Runs the next round for every client against a frozen bank
    /// snapshot, then commits all published records together.
    pub fn run_round(&mut self) -> Result<RoundReport, FederationError> {
        let start = Instant::now();
        let t = self.round + 1;
        let cfg = &self.cfg;
        let view = self.bank.view(t);
        let outputs: Vec<Result<ClientRoundOutput, FederationError>> = self
            .clients
            .par_iter_mut()
            .map(|c| client_local_round(c, &view, cfg, t))
            .collect();
        let mut done = Vec::with_capacity(outputs.len());
        for (i, out) in outputs.into_iter().enumerate() {
            done.push(out.map_err(|e| FederationError::ClientFailed {
                round: t,
                client: ClientId(i as u32),
                source: Box::new(e),
            })?);
        }

        let exchanging = cfg.exchanges_correlations();
        let downloading = exchanging && t > cfg.t_warm;
        let mut metrics = Vec::with_capacity(done.len());
        for (client, out) in self.clients.iter().zip(&done) {
            let bytes_up = if exchanging {
                out.record.wire_size() as u64
            } else {
                0
            };
            let bytes_down = if downloading {
                view.peers(client.id()).map(|r| r.wire_size() as u64).sum()
            } else {
                0
            };
            metrics.push(ClientMetrics {
                client_id: client.id(),
                arch_id: client.model().arch_id().to_string(),
                losses: out.mean_losses(),
                trace_rbar: out.record.trace(),
                rbar_diagonal: out.record.r_bar().diagonal(),
                peers_used: out.peers_used,
                bytes_up,
                bytes_down,
            });
        }

        if cfg.mode == Mode::Fedavg {
            let total: usize = self.clients.iter().map(|c| c.partition().len()).sum();
            let weights: Vec<f64> = self
                .clients
                .iter()
                .map(|c| c.partition().len() as f64 / total as f64)
                .collect();
            let models: Vec<EncoderModel> = self.clients.iter().map(|c| c.model().clone()).collect();
            let global = fedavg_aggregate(&models, &weights)?;
            let model_bytes = 8 * global.param_count() as u64;
            for (c, m) in self.clients.iter_mut().zip(metrics.iter_mut()) {
                c.model = global.clone();
                m.bytes_up = model_bytes;
                m.bytes_down = model_bytes;
            }
        }

        let records: Vec<CorrelationRecord> = done.into_iter().map(|o| o.record).collect();
        self.record_log.extend(records.iter().cloned());
        if exchanging {
            self.bank.commit(records)?;
        }
        self.round = t;

        Ok(RoundReport {
            round: t,
            bytes_uploaded: metrics.iter().map(|m| m.bytes_up).sum(),
            bytes_downloaded: metrics.iter().map(|m| m.bytes_down).sum(),
            clients: metrics,
            wall_time: start.elapsed(),
        })
    }

    /// Runs all remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundReport>, FederationError> {
        let mut history = Vec::new();
        while !self.is_finished() {
            history.push(self.run_round()?);
        }
        Ok(history)
    }

    /// Testing hook: places records straight into the bank.
    #[doc(hidden)]
    pub fn inject_records(
        &mut self,
        records: impl IntoIterator<Item = CorrelationRecord>,
    ) -> Result<(), FederationError> {
        self.bank.commit(records)
    }
}

/// Builds a simulator and runs every configured round.
pub fn run_training(
    cfg: &RunConfig,
    partitions: Vec<Partition>,
) -> Result<(Vec<RoundReport>, Simulator), FederationError> {
    let mut sim = Simulator::new(cfg, partitions)?;
    let history = sim.run()?;
    Ok((history, sim))
}
