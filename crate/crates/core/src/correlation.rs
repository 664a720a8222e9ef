//! Feature-correlation matrices: extraction from projection batches,
//! round-wise averaging, the trace independence score and distance maps.
//!
//! A [`CorrelationRecord`] is the only value that leaves a client.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{frobenius_distance, qr_decompose, LinalgError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cannot average an empty list of correlation matrices")]
    Empty,
    #[error("correlation matrix {index} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid correlation record: {0}")]
    Invalid(String),
    #[error("malformed record encoding: {0}")]
    Decode(String),
}

/// R factor of the thin QR of a projection batch `z` (m×n, m ≥ n).
pub fn extract_correlation(z: &Matrix) -> Result<Matrix, CorrelationError> {
    Ok(qr_decompose(z)?.r)
}

/// Elementwise mean of per-batch correlation matrices.
pub fn round_average(rs: &[Matrix]) -> Result<Matrix, CorrelationError> {
    let first = rs.first().ok_or(CorrelationError::Empty)?;
    let shape = first.shape();
    let mut acc = Matrix::zeros(shape.0, shape.1);
    for (index, r) in rs.iter().enumerate() {
        if r.shape() != shape {
            return Err(CorrelationError::ShapeMismatch {
                index,
                expected: shape,
                actual: r.shape(),
            });
        }
        acc.axpy(1.0, r)?;
    }
    Ok(acc.scale(1.0 / rs.len() as f64))
}

/// Sum of the diagonal; larger means more independent feature directions.
pub fn independence_trace(r: &Matrix) -> Result<f64, CorrelationError> {
    if !r.is_square() {
        return Err(LinalgError::NotSquare("independence_trace").into());
    }
    Ok(r.trace())
}

/// Symmetric matrix of Frobenius distances between the records' `r_bar`.
pub fn pairwise_distance_map(records: &[CorrelationRecord]) -> Result<Matrix, CorrelationError> {
    let k = records.len();
    let mut out = Matrix::zeros(k, k);
    if let Some(first) = records.first() {
        let shape = first.r_bar.shape();
        for (index, rec) in records.iter().enumerate() {
            if rec.r_bar.shape() != shape {
                return Err(CorrelationError::ShapeMismatch {
                    index,
                    expected: shape,
                    actual: rec.r_bar.shape(),
                });
            }
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let d = frobenius_distance(&records[i].r_bar, &records[j].r_bar)?;
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Mean of the strictly-upper entries of a distance map; 0 for fewer than two records.
pub fn mean_pairwise_distance(records: &[CorrelationRecord]) -> Result<f64, CorrelationError> {
    let map = pairwise_distance_map(records)?;
    let k = records.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += map[(i, j)];
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

/// A client's round-averaged correlation matrix as published to the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRecord {
    client_id: ClientId,
    round: u32,
    r_bar: Matrix,
    trace: f64,
    batches_averaged: u32,
}

/// Magic prefix of the binary record encoding.
pub const RECORD_MAGIC: [u8; 4] = *b"FFRC";
/// magic + client_id + round + n + batches_averaged (u32 each) + trace (f64).
pub const RECORD_HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 4 + 8;

/// Encoded size of a record for projection dimension `n`.
pub fn record_wire_size(n: usize) -> usize {
    RECORD_HEADER_BYTES + 8 * n * (n + 1) / 2
}

impl CorrelationRecord {
    pub fn new(
        client_id: ClientId,
        round: u32,
        r_bar: Matrix,
        batches_averaged: u32,
    ) -> Result<Self, CorrelationError> {
        if !r_bar.is_square() {
            return Err(CorrelationError::Invalid(format!(
                "r_bar must be square, got {:?}",
                r_bar.shape()
            )));
        }
        if !r_bar.is_upper_triangular() {
            return Err(CorrelationError::Invalid("r_bar is not upper triangular".into()));
        }
        if r_bar.diagonal().iter().any(|&d| d < 0.0) {
            return Err(CorrelationError::Invalid("r_bar has a negative diagonal entry".into()));
        }
        if batches_averaged == 0 {
            return Err(CorrelationError::Invalid("batches_averaged must be >= 1".into()));
        }
        if !r_bar.is_finite() {
            return Err(CorrelationError::Invalid("r_bar is not finite".into()));
        }
        let trace = r_bar.trace();
        Ok(Self {
            client_id,
            round,
            r_bar,
            trace,
            batches_averaged,
        })
    }

    /// Averages per-batch R factors and wraps the result.
    pub fn from_batches(
        client_id: ClientId,
        round: u32,
        batch_rs: &[Matrix],
    ) -> Result<Self, CorrelationError> {
        let r_bar = round_average(batch_rs)?;
        Self::new(client_id, round, r_bar, batch_rs.len() as u32)
    }

    pub fn client_id(&self) -> ClientId {
        self.client_id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn r_bar(&self) -> &Matrix {
        &self.r_bar
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn batches_averaged(&self) -> u32 {
        self.batches_averaged
    }

    pub fn dim(&self) -> usize {
        self.r_bar.rows()
    }

    pub fn wire_size(&self) -> usize {
        record_wire_size(self.dim())
    }

    /// Little-endian binary encoding; only the upper triangle is stored.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.wire_size());
        out.extend_from_slice(&RECORD_MAGIC);
        out.extend_from_slice(&self.client_id.0.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&self.batches_averaged.to_le_bytes());
        out.extend_from_slice(&self.trace.to_le_bytes());
        for v in packed_upper(&self.r_bar) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CorrelationError> {
        if bytes.len() < RECORD_HEADER_BYTES {
            return Err(CorrelationError::Decode(format!(
                "{} bytes is shorter than the {RECORD_HEADER_BYTES}-byte header",
                bytes.len()
            )));
        }
        if bytes[..4] != RECORD_MAGIC {
            return Err(CorrelationError::Decode("bad magic".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let client_id = ClientId(u32_at(4));
        let round = u32_at(8);
        let n = u32_at(12) as usize;
        let batches = u32_at(16);
        let trace = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let expected = record_wire_size(n);
        if bytes.len() != expected {
            return Err(CorrelationError::Decode(format!(
                "expected {expected} bytes for n={n}, got {}",
                bytes.len()
            )));
        }
        let packed: Vec<f64> = bytes[RECORD_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_wire(client_id, round, n, &packed, trace, batches)
    }

    fn from_wire(
        client_id: ClientId,
        round: u32,
        n: usize,
        packed: &[f64],
        trace: f64,
        batches: u32,
    ) -> Result<Self, CorrelationError> {
        if packed.len() != n * (n + 1) / 2 {
            return Err(CorrelationError::Decode(format!(
                "expected {} packed entries for n={n}, got {}",
                n * (n + 1) / 2,
                packed.len()
            )));
        }
        let r_bar = unpack_upper(n, packed);
        let rec = Self::new(client_id, round, r_bar, batches)?;
        let tol = 1e-9 * rec.trace.abs().max(1.0);
        if (rec.trace - trace).abs() > tol {
            return Err(CorrelationError::Decode(format!(
                "stored trace {trace} disagrees with diagonal sum {}",
                rec.trace
            )));
        }
        Ok(rec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RecordJson::from(self)).expect("record json is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, CorrelationError> {
        let w: RecordJson =
            serde_json::from_str(s).map_err(|e| CorrelationError::Decode(e.to_string()))?;
        Self::from_wire(w.client_id, w.round, w.n, &w.r_bar, w.trace, w.batches_averaged)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    client_id: ClientId,
    round: u32,
    n: usize,
    batches_averaged: u32,
    trace: f64,
    /// Upper triangle, row-major.
    r_bar: Vec<f64>,
}

impl From<&CorrelationRecord> for RecordJson {
    fn from(r: &CorrelationRecord) -> Self {
        Self {
            client_id: r.client_id,
            round: r.round,
            n: r.dim(),
            batches_averaged: r.batches_averaged,
            trace: r.trace,
            r_bar: packed_upper(&r.r_bar),
        }
    }
}

fn packed_upper(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        out.extend_from_slice(&m.row(i)[i..]);
    }
    out
}

fn unpack_upper(n: usize, packed: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    let mut it = packed.iter();
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = *it.next().expect("length checked by caller");
        }
    }
    m
}
