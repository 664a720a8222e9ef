//! Linear-probe evaluation, the trace/accuracy rank correlation, and the
//! end-to-end experiment driver that ties data, federation and probing
//! together.

use thiserror::Error;

use crate::config::{DatasetSpec, RunConfig};
use crate::data::{gen_synthetic_split, load_cifar10, partition_iid, DataError, Dataset, Partition};
use crate::federation::{FederationError, RoundReport, Simulator};
use crate::linalg::Matrix;
use crate::ssl::{EncoderModel, SslError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has no labels")]
    Unlabeled,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("need at least {needed} checkpoints, got {got}")]
    TooFewCheckpoints { needed: usize, got: usize },
    #[error("rank correlation undefined: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

/// Which encoder output the probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeFeatures {
    /// Backbone output, before the calibration layer.
    #[default]
    Representation,
    /// Calibrated projection output.
    Projection,
}

impl std::fmt::Display for ProbeFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeFeatures::Representation => "representation",
            ProbeFeatures::Projection => "projection",
        })
    }
}

impl std::str::FromStr for ProbeFeatures {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "representation" => Ok(ProbeFeatures::Representation),
            "projection" => Ok(ProbeFeatures::Projection),
            other => Err(format!("unknown probe features `{other}` (representation, projection)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub features: ProbeFeatures,
}

impl ProbeConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            epochs: cfg.probe_epochs,
            lr: cfg.probe_lr,
            features: cfg.probe_features,
        }
    }
}

fn checked_labels(ds: &Dataset, num_classes: usize) -> Result<&[usize], EvalError> {
    let labels = ds.labels().ok_or(EvalError::Unlabeled)?;
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(EvalError::LabelOutOfRange { label, num_classes });
    }
    Ok(labels)
}

fn features(encoder: &EncoderModel, ds: &Dataset, which: ProbeFeatures) -> Result<Matrix, EvalError> {
    Ok(match which {
        ProbeFeatures::Representation => encoder.represent(ds.samples())?,
        ProbeFeatures::Projection => encoder.forward(ds.samples())?.0,
    })
}

/// Softmax linear classifier trained by full-batch gradient descent on
/// frozen encoder features (standardised with training statistics).
/// Returns top-1 accuracy on `test`.
pub fn linear_probe(
    encoder: &EncoderModel,
    train: &Dataset,
    test: &Dataset,
    probe: &ProbeConfig,
) -> Result<f64, EvalError> {
    let k = train.num_classes().max(test.num_classes());
    let y_train = checked_labels(train, k)?;
    let y_test = checked_labels(test, k)?;
    if test.is_empty() {
        return Ok(0.0);
    }
    let x_train = features(encoder, train, probe.features)?;
    let x_test = features(encoder, test, probe.features)?;
    let (n, f) = x_train.shape();

    let mut mean = vec![0.0; f];
    let mut std = vec![0.0; f];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x_train.row(i)) {
            *m += v / n as f64;
        }
    }
    for i in 0..n {
        for ((s, v), m) in std.iter_mut().zip(x_train.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let standardize = |x: &Matrix| Matrix::from_fn(x.rows(), f, |i, j| (x[(i, j)] - mean[j]) / std[j]);
    let x_train = standardize(&x_train);
    let x_test = standardize(&x_test);

    let mut w = Matrix::zeros(f, k);
    let mut b = vec![0.0; k];
    for _ in 0..probe.epochs {
        let mut logits = x_train.matmul(&w).map_err(SslError::from)?;
        for i in 0..n {
            let row = logits.row_mut(i);
            for (l, bb) in row.iter_mut().zip(&b) {
                *l += bb;
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for v in row.iter_mut() {
                *v = (*v - max).exp() / sum;
            }
            row[y_train[i]] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
        let gw = x_train.t_matmul(&logits).map_err(SslError::from)?;
        w.axpy(-probe.lr, &gw).map_err(SslError::from)?;
        for i in 0..n {
            for (bb, g) in b.iter_mut().zip(logits.row(i)) {
                *bb -= probe.lr * g;
            }
        }
    }

    let scores = x_test.matmul(&w).map_err(SslError::from)?;
    let correct = (0..x_test.rows())
        .filter(|&i| {
            let pred = scores
                .row(i)
                .iter()
                .zip(&b)
                .map(|(s, bb)| s + bb)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best })
                .0;
            pred == y_test[i]
        })
        .count();
    Ok(correct as f64 / x_test.rows() as f64)
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Degenerate(format!("lengths {} and {}", a.len(), b.len())));
    }
    let distinct = |xs: &[f64]| xs.iter().any(|&x| x != xs[0]);
    if a.len() < 2 || !distinct(a) || !distinct(b) {
        return Err(EvalError::Degenerate("fewer than 2 distinct values".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Probe results at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCheckpoint {
    pub round: u32,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Mean client trace(R̄) in that round.
    pub mean_trace: f64,
}

pub const MIN_CHECKPOINTS: usize = 5;

/// Rank correlation between mean trace(R̄) and mean probe accuracy.
pub fn trace_accuracy_correlation(checkpoints: &[ProbeCheckpoint]) -> Result<f64, EvalError> {
    if checkpoints.len() < MIN_CHECKPOINTS {
        return Err(EvalError::TooFewCheckpoints {
            needed: MIN_CHECKPOINTS,
            got: checkpoints.len(),
        });
    }
    let traces: Vec<f64> = checkpoints.iter().map(|c| c.mean_trace).collect();
    let accs: Vec<f64> = checkpoints.iter().map(|c| c.mean_accuracy).collect();
    spearman(&traces, &accs)
}

/// Data for one run: labeled train/test sets and label-free client shards.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub partitions: Vec<Partition>,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, EvalError> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            noise,
        } => gen_synthetic_split(*classes, *dim, *train_per_class, *test_per_class, *noise, cfg.seed)?,
        DatasetSpec::Cifar10 { path } => {
            let s = load_cifar10(path)?;
            (s.train, s.test)
        }
    };
    let partitions = partition_iid(&train, cfg.num_clients, cfg.seed)?;
    Ok(PreparedData {
        train,
        test,
        partitions,
    })
}

/// Probes every client's encoder.
pub fn probe_clients(sim: &Simulator, data: &PreparedData, probe: &ProbeConfig) -> Result<Vec<f64>, EvalError> {
    sim.clients()
        .iter()
        .map(|c| linear_probe(c.model(), &data.train, &data.test, probe))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub history: Vec<RoundReport>,
    pub checkpoints: Vec<ProbeCheckpoint>,
    pub simulator: Simulator,
}

impl ExperimentOutcome {
    /// Mean probe accuracy after the last round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.checkpoints
            .last()
            .filter(|c| c.round == self.simulator.round())
            .map(|c| c.mean_accuracy)
    }
}

/// Runs all rounds, probing every `cfg.probe_every` rounds and after the
/// final one.
pub fn run_experiment(cfg: &RunConfig, data: &PreparedData) -> Result<ExperimentOutcome, EvalError> {
    let mut sim = Simulator::new(cfg, data.partitions.clone())?;
    let probe = ProbeConfig::from_run(cfg);
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    while !sim.is_finished() {
        let report = sim.run_round()?;
        let t = report.round;
        let due = (cfg.probe_every > 0 && t % cfg.probe_every == 0) || t == cfg.rounds;
        if due {
            let accuracies = probe_clients(&sim, data, &probe)?;
            let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
            checkpoints.push(ProbeCheckpoint {
                round: t,
                accuracies,
                mean_accuracy,
                mean_trace: report.mean_trace(),
            });
        }
        history.push(report);
    }
    Ok(ExperimentOutcome {
        history,
        checkpoints,
        simulator: sim,
    })
}
