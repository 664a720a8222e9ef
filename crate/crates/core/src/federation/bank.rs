use std::collections::BTreeMap;

use super::FederationError;
use crate::correlation::{ClientId, CorrelationRecord};

mod sealed {
    pub trait Sealed {}
    impl Sealed for crate::correlation::CorrelationRecord {}
}

/// Values allowed to cross the client boundary. Sealed: the only
/// implementor is [`CorrelationRecord`].
pub trait BoundaryPayload: sealed::Sealed + Clone + Send + Sync + 'static {}

impl BoundaryPayload for CorrelationRecord {}

/// Names of every [`BoundaryPayload`] implementor.
pub const BOUNDARY_TYPES: &[&str] = &["CorrelationRecord"];

/// Server-side store of each client's latest published record.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    entries: BTreeMap<ClientId, CorrelationRecord>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts records, replacing each client's previous one. A client's
    /// round number must strictly increase.
    pub fn commit(
        &mut self,
        records: impl IntoIterator<Item = CorrelationRecord>,
    ) -> Result<(), FederationError> {
        for rec in records {
            if let Some(prev) = self.entries.get(&rec.client_id()) {
                if rec.round() <= prev.round() {
                    return Err(FederationError::StaleCommit {
                        client: rec.client_id(),
                        previous: prev.round(),
                        offered: rec.round(),
                    });
                }
            }
            self.entries.insert(rec.client_id(), rec);
        }
        Ok(())
    }

    pub fn get(&self, id: ClientId) -> Option<&CorrelationRecord> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &CorrelationRecord> {
        self.entries.values()
    }

    /// Read access for a client training in round `round`: only records
    /// published before that round are visible.
    pub fn view(&self, round: u32) -> BankView<'_> {
        BankView { bank: self, round }
    }
}

/// Staleness-one window onto a [`MemoryBank`].
#[derive(Debug, Clone, Copy)]
pub struct BankView<'a> {
    bank: &'a MemoryBank,
    round: u32,
}

impl<'a> BankView<'a> {
    pub fn round(&self) -> u32 {
        self.round
    }

    /// Records from clients other than `self_id`, in client-id order.
    pub fn peers(&self, self_id: ClientId) -> impl Iterator<Item = &'a CorrelationRecord> {
        let round = self.round;
        self.bank
            .entries
            .values()
            .filter(move |r| r.client_id() != self_id && r.round() < round)
    }
}
