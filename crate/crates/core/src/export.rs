//! Writers for metrics, correlation-distance heatmaps, embeddings and probe
//! checkpoints. All output is deterministic for a given input.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::correlation::{pairwise_distance_map, CorrelationError, CorrelationRecord};
use crate::data::{seeded_rng, Dataset};
use crate::eval::ProbeCheckpoint;
use crate::federation::RoundReport;
use crate::ssl::{EncoderModel, SslError};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("round {0} is not present in the record log")]
    MissingRound(u32),
    #[error("requested {requested} samples from a dataset of {available}")]
    TooManySamples { requested: usize, available: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Ssl(#[from] SslError),
}

pub const METRICS_CSV_HEADER: &str =
    "round,client_id,arch_id,loss_contrastive,loss_reg,trace_rbar,bytes_up,bytes_down";

/// One row per client per round.
pub fn write_metrics_csv(history: &[RoundReport], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for report in history {
        for c in &report.clients {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                report.round,
                c.client_id,
                c.arch_id,
                c.losses.contrastive,
                c.losses.regularizer,
                c.trace_rbar,
                c.bytes_up,
                c.bytes_down
            )?;
        }
    }
    Ok(())
}

/// One JSON object per round.
pub fn write_metrics_ndjson(history: &[RoundReport], mut w: impl Write) -> io::Result<()> {
    for report in history {
        serde_json::to_writer(&mut w, report)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_metrics_ndjson(r: impl BufRead) -> Result<Vec<RoundReport>, ExportError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExportError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_record_log(records: &[CorrelationRecord], mut w: impl Write) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json())?;
    }
    Ok(())
}

pub fn read_record_log(r: impl BufRead) -> Result<Vec<CorrelationRecord>, ExportError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CorrelationRecord::from_json(&line).map_err(|e| ExportError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Records of `round`, ordered by client id.
pub fn records_at(log: &[CorrelationRecord], round: u32) -> Vec<CorrelationRecord> {
    let by_client: BTreeMap<_, _> = log
        .iter()
        .filter(|r| r.round() == round)
        .map(|r| (r.client_id(), r.clone()))
        .collect();
    by_client.into_values().collect()
}

pub const HEATMAP_CSV_HEADER: &str = "round,client_i,client_j,distance";

/// Long-format pairwise distances; each unordered pair appears once (i < j).
pub fn export_heatmap_data(
    log: &[CorrelationRecord],
    rounds: &[u32],
    mut w: impl Write,
) -> Result<(), ExportError> {
    let mut tables = Vec::with_capacity(rounds.len());
    for &round in rounds {
        let recs = records_at(log, round);
        if recs.is_empty() {
            return Err(ExportError::MissingRound(round));
        }
        let map = pairwise_distance_map(&recs)?;
        tables.push((round, recs, map));
    }
    writeln!(w, "{HEATMAP_CSV_HEADER}")?;
    for (round, recs, map) in tables {
        for i in 0..recs.len() {
            for j in i + 1..recs.len() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    round,
                    recs[i].client_id(),
                    recs[j].client_id(),
                    map[(i, j)]
                )?;
            }
        }
    }
    Ok(())
}

/// Projection-space embeddings of a seeded subsample, one row per sample:
/// `label,e0,...,e{d-1}`.
pub fn export_embeddings(
    encoder: &EncoderModel,
    ds: &Dataset,
    sample_count: usize,
    seed: u64,
    mut w: impl Write,
) -> Result<(), ExportError> {
    if sample_count > ds.len() {
        return Err(ExportError::TooManySamples {
            requested: sample_count,
            available: ds.len(),
        });
    }
    let d = encoder.projection_dim();
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..d).map(|j| format!("e{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    if sample_count == 0 {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut seeded_rng(seed, 0xe3b));
    idx.truncate(sample_count);
    idx.sort_unstable();
    let subset = ds.subset(&idx);
    let (z, _) = encoder.forward(subset.samples())?;
    for i in 0..z.rows() {
        let label = subset.labels().map(|l| l[i].to_string()).unwrap_or_default();
        write!(w, "{label}")?;
        for v in z.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_probe_csv(checkpoints: &[ProbeCheckpoint], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "round,client_id,accuracy,mean_accuracy,mean_trace")?;
    for cp in checkpoints {
        for (i, acc) in cp.accuracies.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                cp.round, i, acc, cp.mean_accuracy, cp.mean_trace
            )?;
        }
    }
    Ok(())
}
