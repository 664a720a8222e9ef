//! Experiment configuration in a flat `key = value` text format.
//!
//! Lines starting with `#` and blank lines are ignored; trailing `# ...`
//! comments are stripped. Every key has a default, so an empty file is a
//! valid desk-scale configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AugmentConfig;
use crate::eval::ProbeFeatures;
use crate::ssl::{ArchSpec, ResidualForm};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fedfoa,
    LocalOnly,
    Fedavg,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fedfoa => "fedfoa",
            Mode::LocalOnly => "local-only",
            Mode::Fedavg => "fedavg",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fedfoa" => Ok(Mode::Fedfoa),
            "local-only" | "local" => Ok(Mode::LocalOnly),
            "fedavg" => Ok(Mode::Fedavg),
            other => Err(format!("unknown mode `{other}` (fedfoa, local-only, fedavg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        dim: usize,
        /// Training samples per class across all clients.
        train_per_class: usize,
        test_per_class: usize,
        noise: f64,
    },
    Cifar10 {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub num_clients: usize,
    /// Architecture ids, assigned to clients round-robin.
    pub archs: Vec<String>,
    pub rounds: u32,
    pub batches_per_round: usize,
    pub batch_size: usize,
    pub projection_dim: usize,
    pub lr: f64,
    pub tau: f64,
    pub lambda: f64,
    pub t_warm: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub normalize_before_qr: bool,
    pub squared_residual: bool,
    /// `None` means every peer in the bank.
    pub peers_per_batch: Option<usize>,
    pub augment: AugmentConfig,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_features: ProbeFeatures,
    /// Rounds between probe checkpoints; 0 disables periodic probing.
    pub probe_every: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fedfoa,
            num_clients: 4,
            archs: ArchSpec::zoo().into_iter().map(|a| a.id).collect(),
            rounds: 30,
            batches_per_round: 10,
            batch_size: 64,
            projection_dim: 16,
            lr: 0.05,
            tau: 0.5,
            lambda: 0.01,
            t_warm: 5,
            seed: 0,
            dataset: DatasetSpec::Synthetic {
                classes: 8,
                dim: 32,
                train_per_class: 800,
                test_per_class: 100,
                noise: 0.3,
            },
            normalize_before_qr: false,
            squared_residual: true,
            peers_per_batch: None,
            augment: AugmentConfig::default(),
            probe_epochs: 100,
            probe_lr: 0.5,
            probe_features: ProbeFeatures::Representation,
            probe_every: 5,
        }
    }
}

const KEYS: &[&str] = &[
    "mode",
    "num_clients",
    "archs",
    "rounds",
    "batches_per_round",
    "batch_size",
    "projection_dim",
    "lr",
    "tau",
    "lambda",
    "t_warm",
    "seed",
    "dataset",
    "data_classes",
    "data_dim",
    "data_train_per_class",
    "data_test_per_class",
    "data_noise",
    "data_path",
    "normalize_before_qr",
    "squared_residual",
    "peers_per_batch",
    "aug_noise",
    "aug_dropout",
    "aug_flip",
    "probe_epochs",
    "probe_lr",
    "probe_features",
    "probe_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    /// Hyperparameters at the scale of the original CIFAR experiments.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 500,
            lr: 0.032,
            projection_dim: 256,
            t_warm: 5,
            lambda: 0.01,
            probe_epochs: 200,
            ..Self::default()
        }
    }

    pub fn residual_form(&self) -> ResidualForm {
        if self.squared_residual {
            ResidualForm::Squared
        } else {
            ResidualForm::Plain
        }
    }

    /// Whether correlation records travel through the bank at all.
    /// With λ = 0 nothing downstream can read them.
    pub fn exchanges_correlations(&self) -> bool {
        self.mode == Mode::Fedfoa && self.lambda > 0.0
    }

    pub fn arch_for(&self, client: usize) -> &str {
        &self.archs[client % self.archs.len()]
    }

    pub fn input_dim_hint(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSpec::Synthetic { dim, .. } => Some(*dim),
            DatasetSpec::Cifar10 { .. } => Some(3072),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "mode" => {
                self.mode = value.parse().map_err(|msg| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    msg,
                })?
            }
            "num_clients" => self.num_clients = parse(key, value)?,
            "archs" => {
                self.archs = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "rounds" => self.rounds = parse(key, value)?,
            "batches_per_round" => self.batches_per_round = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "projection_dim" => self.projection_dim = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "t_warm" => self.t_warm = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => match &self.dataset {
                        d @ DatasetSpec::Synthetic { .. } => d.clone(),
                        DatasetSpec::Cifar10 { .. } => RunConfig::default().dataset,
                    },
                    "cifar10" => match &self.dataset {
                        d @ DatasetSpec::Cifar10 { .. } => d.clone(),
                        DatasetSpec::Synthetic { .. } => DatasetSpec::Cifar10 {
                            path: PathBuf::from("cifar-10-batches-bin"),
                        },
                    },
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: other.into(),
                            msg: "expected synthetic or cifar10".into(),
                        })
                    }
                }
            }
            "data_classes" | "data_dim" | "data_train_per_class" | "data_test_per_class"
            | "data_noise" => {
                let DatasetSpec::Synthetic {
                    classes,
                    dim,
                    train_per_class,
                    test_per_class,
                    noise,
                } = &mut self.dataset
                else {
                    return Err(ConfigError::Invalid(format!(
                        "`{key}` only applies to the synthetic dataset"
                    )));
                };
                match key {
                    "data_classes" => *classes = parse(key, value)?,
                    "data_dim" => *dim = parse(key, value)?,
                    "data_train_per_class" => *train_per_class = parse(key, value)?,
                    "data_test_per_class" => *test_per_class = parse(key, value)?,
                    _ => *noise = parse(key, value)?,
                }
            }
            "data_path" => {
                let DatasetSpec::Cifar10 { path } = &mut self.dataset else {
                    return Err(ConfigError::Invalid(
                        "`data_path` only applies to the cifar10 dataset".into(),
                    ));
                };
                *path = PathBuf::from(value);
            }
            "normalize_before_qr" => self.normalize_before_qr = parse(key, value)?,
            "squared_residual" => self.squared_residual = parse(key, value)?,
            "peers_per_batch" => {
                self.peers_per_batch = if value == "all" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "aug_noise" => self.augment.noise_std = parse(key, value)?,
            "aug_dropout" => self.augment.dropout = parse(key, value)?,
            "aug_flip" => self.augment.flip = parse(key, value)?,
            "probe_epochs" => self.probe_epochs = parse(key, value)?,
            "probe_lr" => self.probe_lr = parse(key, value)?,
            "probe_features" => self.probe_features = parse(key, value)?,
            "probe_every" => self.probe_every = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Key-value pairs in canonical order; [`RunConfig::parse_str`] inverts this.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("mode", self.mode.to_string()),
            ("num_clients", self.num_clients.to_string()),
            ("archs", self.archs.join(",")),
            ("rounds", self.rounds.to_string()),
            ("batches_per_round", self.batches_per_round.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("projection_dim", self.projection_dim.to_string()),
            ("lr", self.lr.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("t_warm", self.t_warm.to_string()),
            ("seed", self.seed.to_string()),
        ];
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                dim,
                train_per_class,
                test_per_class,
                noise,
            } => {
                out.push(("dataset", "synthetic".into()));
                out.push(("data_classes", classes.to_string()));
                out.push(("data_dim", dim.to_string()));
                out.push(("data_train_per_class", train_per_class.to_string()));
                out.push(("data_test_per_class", test_per_class.to_string()));
                out.push(("data_noise", noise.to_string()));
            }
            DatasetSpec::Cifar10 { path } => {
                out.push(("dataset", "cifar10".into()));
                out.push(("data_path", path.display().to_string()));
            }
        }
        out.extend([
            ("normalize_before_qr", self.normalize_before_qr.to_string()),
            ("squared_residual", self.squared_residual.to_string()),
            (
                "peers_per_batch",
                self.peers_per_batch
                    .map_or_else(|| "all".to_string(), |k| k.to_string()),
            ),
            ("aug_noise", self.augment.noise_std.to_string()),
            ("aug_dropout", self.augment.dropout.to_string()),
            ("aug_flip", self.augment.flip.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
            ("probe_lr", self.probe_lr.to_string()),
            ("probe_features", self.probe_features.to_string()),
            ("probe_every", self.probe_every.to_string()),
        ]);
        debug_assert!(out.iter().all(|(k, _)| KEYS.contains(k)));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// All recognised keys.
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.batch_size < self.projection_dim {
            return bad(format!(
                "batch_size ({}) must be >= projection_dim ({}) for the QR factorisation",
                self.batch_size, self.projection_dim
            ));
        }
        if self.num_clients == 0
            || self.batches_per_round == 0
            || self.batch_size == 0
            || self.projection_dim == 0
        {
            return bad("num_clients, batches_per_round, batch_size and projection_dim must be positive".into());
        }
        if self.archs.is_empty() {
            return bad("archs must list at least one architecture".into());
        }
        if let Some(a) = self.archs.iter().find(|a| ArchSpec::lookup(a).is_none()) {
            return bad(format!("unknown architecture `{a}`"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if self.peers_per_batch == Some(0) {
            return bad("peers_per_batch must be positive or `all`".into());
        }
        if !(0.0..=1.0).contains(&self.augment.dropout) || !(self.augment.noise_std >= 0.0) {
            return bad("aug_dropout must be in [0,1] and aug_noise >= 0".into());
        }
        if self.mode == Mode::Fedavg {
            let first = &self.archs[0];
            if (0..self.num_clients).any(|c| self.arch_for(c) != first) {
                return bad("fedavg needs every client on the same architecture".into());
            }
        }
        if let DatasetSpec::Synthetic {
            classes,
            dim,
            train_per_class,
            noise,
            ..
        } = &self.dataset
        {
            if *classes == 0 || *dim == 0 || *train_per_class == 0 {
                return bad("synthetic dataset counts must be positive".into());
            }
            if !(*noise >= 0.0) {
                return bad("data_noise must be >= 0".into());
            }
        }
        Ok(())
    }
}
