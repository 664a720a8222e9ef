use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SslError;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored in×out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, SslError> {
        if bias.len() != weight.cols() {
            return Err(SslError::Shape(format!(
                "bias of length {} for weight {:?}",
                bias.len(),
                weight.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    fn random(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| normal.sample(rng));
        Self {
            weight,
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    /// Returns (pre-activation, output).
    fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix), SslError> {
        let mut pre = x.matmul(&self.weight)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let out = match self.activation {
            Activation::Relu => pre.map(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        };
        Ok((pre, out))
    }
}

/// Architecture of a desk-scale encoder: hidden ReLU widths before the
/// linear calibration layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub id: String,
    pub hidden: Vec<usize>,
}

impl ArchSpec {
    pub fn new(id: impl Into<String>, hidden: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            hidden,
        }
    }

    /// The four heterogeneous MLPs used for desk-scale runs.
    pub fn zoo() -> Vec<ArchSpec> {
        vec![
            ArchSpec::new("mlp-a", vec![64]),
            ArchSpec::new("mlp-b", vec![128, 64]),
            ArchSpec::new("mlp-c", vec![96]),
            ArchSpec::new("mlp-d", vec![128, 96, 64]),
        ]
    }

    pub fn lookup(id: &str) -> Option<ArchSpec> {
        Self::zoo().into_iter().find(|a| a.id == id)
    }
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Input to every layer, calibration last.
    inputs: Vec<Matrix>,
    /// Pre-activation of every layer, calibration last.
    pre: Vec<Matrix>,
}

impl Activations {
    /// Backbone representation (input to the calibration layer).
    pub fn representation(&self) -> &Matrix {
        self.inputs.last().expect("at least the calibration layer")
    }

    /// Sign pattern of every ReLU pre-activation, used to detect kinks.
    pub fn relu_pattern(&self, model: &EncoderModel) -> Vec<bool> {
        model
            .all_layers()
            .zip(&self.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, p)| p.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Per-layer parameter gradients in the same order as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl Gradients {
    /// Flattened in parameter declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.is_finite() && b.iter().all(|v| v.is_finite()))
    }
}

/// Encoder with hidden layers followed by a linear calibration layer into
/// the shared projection space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    arch_id: String,
    layers: Vec<DenseLayer>,
    calibration: DenseLayer,
}

impl EncoderModel {
    pub fn new(
        arch_id: impl Into<String>,
        layers: Vec<DenseLayer>,
        calibration: DenseLayer,
    ) -> Result<Self, SslError> {
        if calibration.activation != Activation::Identity {
            return Err(SslError::Shape("calibration layer must be linear".into()));
        }
        let model = Self {
            arch_id: arch_id.into(),
            layers,
            calibration,
        };
        let mut dims = model.all_layers().map(|l| (l.input_dim(), l.output_dim()));
        let mut prev = dims.next().map(|d| d.1);
        for (i, o) in dims {
            if Some(i) != prev {
                return Err(SslError::Shape(format!(
                    "layer input {i} does not match previous output {prev:?}"
                )));
            }
            prev = Some(o);
        }
        if !model.all_layers().all(DenseLayer::is_finite) {
            return Err(SslError::NonFiniteParameters);
        }
        Ok(model)
    }

    /// He-initialised model for `arch`.
    pub fn init(arch: &ArchSpec, input_dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut fan_in = input_dim;
        for &w in &arch.hidden {
            layers.push(DenseLayer::random(fan_in, w, Activation::Relu, rng));
            fan_in = w;
        }
        let calibration = DenseLayer::random(fan_in, proj_dim, Activation::Identity, rng);
        Self {
            arch_id: arch.id.clone(),
            layers,
            calibration,
        }
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn calibration(&self) -> &DenseLayer {
        &self.calibration
    }

    pub fn all_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().chain(std::iter::once(&self.calibration))
    }

    fn all_layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.layers
            .iter_mut()
            .chain(std::iter::once(&mut self.calibration))
    }

    pub fn input_dim(&self) -> usize {
        self.all_layers().next().expect("calibration exists").input_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.calibration.output_dim()
    }

    pub fn representation_dim(&self) -> usize {
        self.calibration.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.all_layers().map(DenseLayer::param_count).sum()
    }

    /// Flattened parameters in declaration order (per layer: weight row-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.all_layers()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.all_layers_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    /// Overwrites all parameters from a flat vector in declaration order.
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), SslError> {
        if values.len() != self.param_count() {
            return Err(SslError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SslError::NonFiniteParameters);
        }
        for (p, v) in self.parameters_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.parameters() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Projection-space output `z` plus the intermediates for backprop.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Activations), SslError> {
        if batch.cols() != self.input_dim() {
            return Err(SslError::Shape(format!(
                "batch width {} does not match model input {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if !self.all_layers().all(DenseLayer::is_finite) {
            return Err(SslError::NonFiniteParameters);
        }
        let depth = self.layers.len() + 1;
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut x = batch.clone();
        for layer in self.all_layers() {
            let (p, out) = layer.forward(&x)?;
            inputs.push(x);
            pre.push(p);
            x = out;
        }
        Ok((x, Activations { inputs, pre }))
    }

    /// Backbone features (before calibration), used for linear probing.
    pub fn represent(&self, batch: &Matrix) -> Result<Matrix, SslError> {
        let (_, acts) = self.forward(batch)?;
        Ok(acts.representation().clone())
    }

    /// Parameter gradients for an upstream gradient on `z`.
    pub fn backward(&self, acts: &Activations, upstream: &Matrix) -> Result<Gradients, SslError> {
        let depth = self.layers.len() + 1;
        if acts.inputs.len() != depth {
            return Err(SslError::Shape("activations come from a different model".into()));
        }
        let last = &acts.pre[depth - 1];
        if upstream.shape() != last.shape() {
            return Err(SslError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                last.shape()
            )));
        }
        let layers: Vec<&DenseLayer> = self.all_layers().collect();
        let mut grads = Vec::with_capacity(depth);
        let mut delta = upstream.clone();
        for idx in (0..depth).rev() {
            let layer = layers[idx];
            if layer.activation == Activation::Relu {
                let pre = &acts.pre[idx];
                for (d, &p) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let gw = acts.inputs[idx].t_matmul(&delta)?;
            let mut gb = vec![0.0; layer.output_dim()];
            for i in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            if idx > 0 {
                delta = delta.matmul_t(&layer.weight)?;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Plain SGD step `θ ← θ − lr·∇θ`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<(), SslError> {
        if !grads.is_finite() {
            return Err(SslError::NonFiniteGradient);
        }
        if grads.layers.len() != self.layers.len() + 1 {
            return Err(SslError::Shape("gradient layer count mismatch".into()));
        }
        for (layer, (gw, gb)) in self.all_layers_mut().zip(&grads.layers) {
            layer.weight.axpy(-lr, gw)?;
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
        if !self.all_layers().all(DenseLayer::is_finite) {
            return Err(SslError::NonFiniteParameters);
        }
        Ok(())
    }

    /// Backpropagates `upstream` and applies one SGD step.
    pub fn backward_and_step(
        &mut self,
        acts: &Activations,
        upstream: &Matrix,
        lr: f64,
    ) -> Result<(), SslError> {
        let grads = self.backward(acts, upstream)?;
        self.apply_sgd(&grads, lr)
    }
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"FFAM";
const CHECKPOINT_VERSION: u32 = 1;

impl EncoderModel {
    /// Self-describing little-endian checkpoint.
    ///
    /// Layout: magic, version, arch_id (u32 length + UTF-8), layer count
    /// (calibration last), per layer `(in u32, out u32, activation u8)`,
    /// then every layer's weights (row-major, in×out) followed by its bias,
    /// all as f64.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.arch_id.as_bytes());
        out.extend_from_slice(&((self.layers.len() + 1) as u32).to_le_bytes());
        for l in self.all_layers() {
            out.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
            out.push(l.activation.code());
        }
        for v in self.parameters() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, SslError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(SslError::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(SslError::Checkpoint(format!("unsupported version {version}")));
        }
        let id_len = cur.u32()? as usize;
        let arch_id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|_| SslError::Checkpoint("arch_id is not UTF-8".into()))?;
        let count = cur.u32()? as usize;
        if count == 0 {
            return Err(SslError::Checkpoint("no layers".into()));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let i = cur.u32()? as usize;
            let o = cur.u32()? as usize;
            let act = Activation::from_code(cur.take(1)?[0])
                .ok_or_else(|| SslError::Checkpoint("unknown activation".into()))?;
            shapes.push((i, o, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, o, act) in shapes {
            let w = cur.f64s(i * o)?;
            let b = cur.f64s(o)?;
            let weight = Matrix::from_vec(i, o, w).map_err(|e| SslError::Checkpoint(e.to_string()))?;
            layers.push(DenseLayer::new(weight, b, act)?);
        }
        if cur.pos != bytes.len() {
            return Err(SslError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        let calibration = layers.pop().expect("count > 0");
        EncoderModel::new(arch_id, layers, calibration)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SslError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            SslError::Checkpoint(format!("truncated at byte offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SslError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SslError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| SslError::Checkpoint("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
