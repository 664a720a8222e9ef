//! Datasets, IID partitioning and two-view augmentation.
//!
//! Training code only ever sees a [`Partition`], which exposes samples but
//! not labels. Labels live on [`Dataset`] and are read by evaluation.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated record at byte offset {offset} ({len} bytes total)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        len: usize,
    },
    #[error("{path}: expected {expected} records, found {actual}")]
    RecordCount {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("cannot split {samples} samples across {clients} clients")]
    TooManyClients { samples: usize, clients: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

/// Channel-plane-major image layout of a flattened sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const CIFAR: ImageShape = ImageShape {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples plus optional labels. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Arc<Matrix>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    source: DataSource,
    image_shape: Option<ImageShape>,
}

impl Dataset {
    pub fn new(
        samples: Matrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        source: DataSource,
    ) -> Result<Self, DataError> {
        if let Some(labels) = &labels {
            if labels.len() != samples.rows() {
                return Err(DataError::Invalid(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    samples.rows()
                )));
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(DataError::LabelOutOfRange { label, num_classes });
            }
        }
        Ok(Self {
            samples: Arc::new(samples),
            labels,
            num_classes,
            source,
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, shape: ImageShape) -> Result<Self, DataError> {
        if shape.len() != self.samples.cols() {
            return Err(DataError::Invalid(format!(
                "image shape {shape:?} does not cover {} features",
                self.samples.cols()
            )));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows selected by `indices`, keeping labels aligned.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.samples.row(i));
        }
        Dataset {
            samples: Arc::new(Matrix::from_vec(indices.len(), d, data).expect("rows are finite")),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            source: self.source,
            image_shape: self.image_shape,
        }
    }

    /// Same samples with labels replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::Invalid("label count mismatch".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(DataError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(Dataset {
            samples: Arc::clone(&self.samples),
            labels: Some(labels),
            num_classes: self.num_classes,
            source: self.source,
            image_shape: self.image_shape,
        })
    }

    /// Label-free view over all samples in their stored order.
    pub fn full_partition(&self) -> Partition {
        Partition {
            samples: Arc::clone(&self.samples),
            indices: (0..self.len()).collect(),
            image_shape: self.image_shape,
        }
    }
}

/// Label-free, read-only view of a subset of a dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    samples: Arc<Matrix>,
    indices: Vec<usize>,
    image_shape: Option<ImageShape>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.cols()
    }

    /// Indices into the parent dataset.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    /// Stacks the rows at the given local positions.
    pub fn gather(&self, local: &[usize]) -> Matrix {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(local.len() * d);
        for &i in local {
            data.extend_from_slice(self.samples.row(self.indices[i]));
        }
        Matrix::from_vec(local.len(), d, data).expect("rows are finite")
    }
}

/// Seeded generator shared by everything that needs reproducible randomness.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn class_centers(num_classes: usize, input_dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn sample_clusters(
    centers: &[Vec<f64>],
    per_class: usize,
    noise_scale: f64,
    rng: &mut impl Rng,
) -> Result<Dataset, DataError> {
    let dim = centers.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(centers.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &cv in c {
                let eps: f64 = StandardNormal.sample(rng);
                data.push(cv + noise_scale * eps);
            }
            labels.push(class);
        }
    }
    let samples = Matrix::from_vec(labels.len(), dim, data)?;
    Dataset::new(samples, Some(labels), centers.len(), DataSource::Synthetic)
}

/// Gaussian clusters around unit-norm random centres, class-major order.
pub fn gen_synthetic(
    num_classes: usize,
    input_dim: usize,
    samples_per_class: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    Ok(gen_synthetic_split(num_classes, input_dim, samples_per_class, 0, noise_scale, seed)?.0)
}

/// Train and test sets drawn around the same class centres.
pub fn gen_synthetic_split(
    num_classes: usize,
    input_dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if num_classes == 0 || input_dim == 0 || train_per_class == 0 {
        return Err(DataError::Invalid("synthetic counts must be positive".into()));
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(DataError::Invalid(format!("noise scale {noise_scale}")));
    }
    let centers = class_centers(num_classes, input_dim, &mut seeded_rng(seed, 0));
    let train = sample_clusters(&centers, train_per_class, noise_scale, &mut seeded_rng(seed, 1))?;
    let test = sample_clusters(&centers, test_per_class, noise_scale, &mut seeded_rng(seed, 2))?;
    Ok((train, test))
}

pub const CIFAR_RECORD_BYTES: usize = 1 + 3072;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

/// Parses one CIFAR-10 binary batch file.
pub fn load_cifar10_batch(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_cifar10(&bytes, path)
}

fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<Dataset, DataError> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() - bytes.len() % CIFAR_RECORD_BYTES,
            len: bytes.len(),
        });
    }
    let count = bytes.len() / CIFAR_RECORD_BYTES;
    let mut data = Vec::with_capacity(count * 3072);
    let mut labels = Vec::with_capacity(count);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(DataError::LabelOutOfRange {
                label,
                num_classes: 10,
            });
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let samples = Matrix::from_vec(count, 3072, data)?;
    Dataset::new(samples, Some(labels), 10, DataSource::Cifar10)?.with_image_shape(ImageShape::CIFAR)
}

/// The standard train/test split.
#[derive(Debug, Clone)]
pub struct CifarSplits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<CifarSplits, DataError> {
    let load = |name: &str| -> Result<Dataset, DataError> {
        let path = dir.join(name);
        let ds = load_cifar10_batch(&path)?;
        if ds.len() != CIFAR_RECORDS_PER_FILE {
            return Err(DataError::RecordCount {
                path,
                expected: CIFAR_RECORDS_PER_FILE,
                actual: ds.len(),
            });
        }
        Ok(ds)
    };
    let mut data = Vec::with_capacity(50_000 * 3072);
    let mut labels = Vec::with_capacity(50_000);
    for i in 1..=5 {
        let ds = load(&format!("data_batch_{i}.bin"))?;
        data.extend_from_slice(ds.samples().as_slice());
        labels.extend_from_slice(ds.labels().expect("cifar has labels"));
    }
    let train = Dataset::new(
        Matrix::from_vec(labels.len(), 3072, data)?,
        Some(labels),
        10,
        DataSource::Cifar10,
    )?
    .with_image_shape(ImageShape::CIFAR)?;
    let test = load("test_batch.bin")?;
    Ok(CifarSplits { train, test })
}

/// Shuffles and splits into near-equal disjoint parts; earlier clients get
/// the remainder.
pub fn partition_iid(ds: &Dataset, num_clients: usize, seed: u64) -> Result<Vec<Partition>, DataError> {
    if num_clients == 0 {
        return Err(DataError::Invalid("num_clients must be >= 1".into()));
    }
    if num_clients > ds.len() {
        return Err(DataError::TooManyClients {
            samples: ds.len(),
            clients: num_clients,
        });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seeded_rng(seed, 0x9a27));
    let base = ds.len() / num_clients;
    let extra = ds.len() % num_clients;
    let mut out = Vec::with_capacity(num_clients);
    let mut start = 0;
    for c in 0..num_clients {
        let size = base + usize::from(c < extra);
        out.push(Partition {
            samples: Arc::clone(&ds.samples),
            indices: order[start..start + size].to_vec(),
            image_shape: ds.image_shape,
        });
        start += size;
    }
    Ok(out)
}

/// Stochastic view generation for flat vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Std of additive Gaussian noise.
    pub noise_std: f64,
    /// Probability of zeroing each coordinate.
    pub dropout: f64,
    /// Random horizontal flip (image-shaped data only).
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            dropout: 0.2,
            flip: true,
        }
    }
}

impl AugmentConfig {
    pub const IDENTITY: AugmentConfig = AugmentConfig {
        noise_std: 0.0,
        dropout: 0.0,
        flip: false,
    };
}

/// Two views per sample: rows `2k` and `2k+1` come from sample `k`.
pub fn two_view_augment(
    batch: &Matrix,
    aug: &AugmentConfig,
    image_shape: Option<ImageShape>,
    rng: &mut impl Rng,
) -> Matrix {
    let (m, d) = batch.shape();
    let noise = Normal::new(0.0, aug.noise_std.max(0.0)).expect("finite std");
    let mut out = Matrix::zeros(2 * m, d);
    for k in 0..m {
        for v in 0..2 {
            let row = out.row_mut(2 * k + v);
            row.copy_from_slice(batch.row(k));
            if let (true, Some(shape)) = (aug.flip, image_shape) {
                if rng.gen_bool(0.5) {
                    hflip(row, shape);
                }
            }
            for x in row.iter_mut() {
                if aug.noise_std > 0.0 {
                    *x += noise.sample(rng);
                }
                if aug.dropout > 0.0 && rng.gen::<f64>() < aug.dropout {
                    *x = 0.0;
                }
            }
        }
    }
    out
}

fn hflip(row: &mut [f64], shape: ImageShape) {
    for c in 0..shape.channels {
        for y in 0..shape.height {
            let start = (c * shape.height + y) * shape.width;
            row[start..start + shape.width].reverse();
        }
    }
}

/// Writes `label,x0,...` with a one-line header; the label column is empty
/// for unlabeled data.
pub fn write_csv(ds: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..ds.input_dim()).map(|j| format!("x{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let label = ds.labels().map(|l| l[i].to_string()).unwrap_or_default();
        write!(w, "{label}")?;
        for v in ds.samples().row(i) {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the format produced by [`write_csv`].
pub fn read_csv(r: impl BufRead, num_classes: usize) -> Result<Dataset, DataError> {
    let mut lines = r.lines();
    let csv_err = |line: usize, msg: String| DataError::Csv { line, msg };
    let header = lines
        .next()
        .ok_or_else(|| csv_err(1, "missing header".into()))?
        .map_err(|e| csv_err(1, e.to_string()))?;
    let dim = header.split(',').count().saturating_sub(1);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = None;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| csv_err(lineno, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        let has = !label.is_empty();
        if *any_label.get_or_insert(has) != has {
            return Err(csv_err(lineno, "mixed labeled and unlabeled rows".into()));
        }
        if has {
            labels.push(label.parse::<usize>().map_err(|e| csv_err(lineno, e.to_string()))?);
        }
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|e| csv_err(lineno, e.to_string()))?);
        }
        if data.len() - before != dim {
            return Err(csv_err(lineno, format!("expected {dim} values")));
        }
    }
    let rows = data.len() / dim.max(1);
    let samples = Matrix::from_vec(rows, dim, data)?;
    let labels = any_label.unwrap_or(false).then_some(labels);
    Dataset::new(samples, labels, num_classes, DataSource::Synthetic)
}
