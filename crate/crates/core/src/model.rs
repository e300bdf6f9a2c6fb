//! MLP classifier shared by the teacher and student roles.
//!
//! Parameters live in one flat [`ParamVector`]. Layout, layer by layer: the
//! weight matrix `fan_in × fan_out` in row-major order, then the `fan_out`
//! biases. Hidden layers use ReLU; the last layer emits logits.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::tensor::{Matrix, NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub role: Role,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize, role: Role) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            classes,
            role,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument(format!(
                "model needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Argument("all layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Fingerprint of the parameter layout. The role does not take part:
    /// a teacher and a student with equal widths share a layout.
    pub fn layout_id(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325_u64;
        let mut eat = |v: usize| {
            for b in (v as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.input_dim);
        eat(self.hidden.len());
        for &w in &self.hidden {
            eat(w);
        }
        eat(self.classes);
        h
    }
}

/// Flat parameter vector tagged with the layout it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: u64,
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.num_params()],
            layout: spec.layout_id(),
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_params() {
            return Err(Error::Format(format!(
                "parameter count {} does not match spec ({} expected)",
                values.len(),
                spec.num_params()
            )));
        }
        Ok(Self {
            values,
            layout: spec.layout_id(),
        })
    }

    /// Same layout, new values. Panics on length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length changed");
        Self {
            values,
            layout: self.layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> u64 {
        self.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matches(&self, spec: &ModelSpec) -> bool {
        self.layout == spec.layout_id() && self.values.len() == spec.num_params()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Splits into per-layer `(weights, bias)` matrices.
    pub fn unflatten(&self, spec: &ModelSpec) -> Result<Vec<(Matrix, Matrix)>> {
        self.check(spec)?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let w_len = fan_in * fan_out;
            let w = Matrix::new(fan_in, fan_out, self.values[offset..offset + w_len].to_vec())?;
            offset += w_len;
            let b = Matrix::row_vector(self.values[offset..offset + fan_out].to_vec());
            offset += fan_out;
            layers.push((w, b));
        }
        Ok(layers)
    }

    pub fn flatten(spec: &ModelSpec, layers: &[(Matrix, Matrix)]) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.num_params());
        for (w, b) in layers {
            values.extend_from_slice(w.data());
            values.extend_from_slice(b.data());
        }
        Self::from_values(spec, values)
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if !self.matches(spec) {
            return Err(Error::Protocol(format!(
                "parameter layout mismatch: {} values for a spec needing {}",
                self.values.len(),
                spec.num_params()
            )));
        }
        Ok(())
    }
}

/// Isotropic Gaussian prior precision λ; `log p(θ) = -(λ/2)‖θ‖²` up to a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorHyper {
    pub precision: f64,
}

impl PriorHyper {
    pub fn new(precision: f64) -> Result<Self> {
        if !(precision >= 0.0) || !precision.is_finite() {
            return Err(Error::Argument(format!(
                "prior precision must be finite and >= 0, got {precision}"
            )));
        }
        Ok(Self { precision })
    }

    pub fn log_density(&self, params: &ParamVector) -> f64 {
        -0.5 * self.precision * params.squared_norm()
    }
}

/// Kaiming-style uniform init: weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ParamVector {
    let mut values = Vec::with_capacity(spec.num_params());
    for (fan_in, fan_out) in spec.layer_dims() {
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        values.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector {
        values,
        layout: spec.layout_id(),
    }
}

fn check_inputs(spec: &ModelSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != spec.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            lhs: inputs.shape(),
            rhs: (spec.input_dim, spec.classes),
        });
    }
    Ok(())
}

/// Logits, one row per input.
pub fn forward(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(spec, inputs)?;
    let layers = params.unflatten(spec)?;
    let last = layers.len() - 1;
    let mut h = inputs.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        h = h.matmul(w)?.add_bias(b)?;
        if i < last {
            h = h.relu();
        }
    }
    Ok(h)
}

pub fn predict_proba(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward(spec, params, inputs)?.softmax_rows())
}

/// A forward pass recorded on a tape.
pub struct TapedForward {
    pub logits: NodeId,
    /// `(weights, bias)` leaves per layer, in layout order.
    pub leaves: Vec<(NodeId, NodeId)>,
}

pub fn taped_forward(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<TapedForward> {
    check_inputs(spec, inputs)?;
    let layers = params.unflatten(spec)?;
    let last = layers.len() - 1;
    let mut h = tape.leaf(inputs.clone());
    let mut leaves = Vec::with_capacity(layers.len());
    for (i, (w, b)) in layers.into_iter().enumerate() {
        let w = tape.leaf(w);
        let b = tape.leaf(b);
        leaves.push((w, b));
        let z = tape.matmul(h, w)?;
        h = tape.add_bias(z, b)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    Ok(TapedForward { logits: h, leaves })
}

/// Adds `-(λ/2)‖θ‖²` over all parameter leaves to `objective`.
pub(crate) fn add_prior_term(
    tape: &mut Tape,
    leaves: &[(NodeId, NodeId)],
    prior: PriorHyper,
    objective: NodeId,
) -> Result<NodeId> {
    if prior.precision == 0.0 {
        return Ok(objective);
    }
    let mut acc = objective;
    for &(w, b) in leaves {
        for leaf in [w, b] {
            let sq = tape.mul(leaf, leaf)?;
            let s = tape.sum(sq)?;
            let term = tape.scale(s, -0.5 * prior.precision)?;
            acc = tape.add(acc, term)?;
        }
    }
    Ok(acc)
}

/// Flattens leaf adjoints back into parameter layout order.
pub(crate) fn collect_gradient(
    tape: &Tape,
    grads: &crate::tensor::Gradients,
    leaves: &[(NodeId, NodeId)],
) -> Vec<f64> {
    let mut out = Vec::new();
    for &(w, b) in leaves {
        out.extend_from_slice(grads.get_or_zeros(tape, w).data());
        out.extend_from_slice(grads.get_or_zeros(tape, b).data());
    }
    out
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &y) in labels.iter().enumerate() {
        m.row_mut(r)[y] = 1.0;
    }
    m
}

/// A labeled minibatch.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
}

fn check_batch(spec: &ModelSpec, batch: &Batch<'_>, full_size: usize) -> Result<()> {
    if batch.labels.is_empty() {
        return Err(Error::Argument("empty minibatch".into()));
    }
    if batch.labels.len() != batch.inputs.rows() {
        return Err(Error::Dimension {
            op: "log_joint",
            lhs: batch.inputs.shape(),
            rhs: (batch.labels.len(), 1),
        });
    }
    if batch.labels.len() > full_size {
        return Err(Error::Argument(format!(
            "minibatch size {} exceeds dataset size {full_size}",
            batch.labels.len()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= spec.classes) {
        return Err(Error::Argument(format!("label {y} out of range")));
    }
    Ok(())
}

fn taped_log_joint(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    prior: PriorHyper,
    full_size: usize,
) -> Result<(NodeId, Vec<(NodeId, NodeId)>)> {
    check_batch(spec, batch, full_size)?;
    let fwd = taped_forward(tape, spec, params, batch.inputs)?;
    let lp = tape.log_softmax(fwd.logits)?;
    let targets = one_hot(batch.labels, spec.classes);
    let nll = tape.cross_entropy_soft(lp, &targets)?;
    let scale = full_size as f64 / batch.labels.len() as f64;
    let loglik = tape.scale(nll, -scale)?;
    let total = add_prior_term(tape, &fwd.leaves, prior, loglik)?;
    Ok((total, fwd.leaves))
}

/// `-(λ/2)‖θ‖² + (N/M) Σ_batch log p(y|x,θ)`, Gaussian normalizer dropped.
pub fn log_joint(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    prior: PriorHyper,
    full_size: usize,
) -> Result<f64> {
    check_batch(spec, batch, full_size)?;
    let lp = forward(spec, params, batch.inputs)?.log_softmax_rows();
    let loglik: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(r, &y)| lp.get(r, y))
        .sum();
    let scale = full_size as f64 / batch.labels.len() as f64;
    let value = prior.log_density(params) + scale * loglik;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "log_joint".into(),
        });
    }
    Ok(value)
}

/// Value and gradient of [`log_joint`] in one reverse pass.
pub fn log_joint_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    prior: PriorHyper,
    full_size: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let (out, leaves) = taped_log_joint(&mut tape, spec, params, batch, prior, full_size)?;
    let grads = tape.backward(out)?;
    Ok((tape.value(out).get(0, 0), collect_gradient(&tape, &grads, &leaves)))
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format: &'static str,
    version: u32,
    spec: &'a ModelSpec,
    #[serde(serialize_with = "json::vec_f64_17")]
    params: &'a [f64],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    format: String,
    version: u32,
    spec: ModelSpec,
    params: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "fedppd-checkpoint";

/// Serializes a model as a self-describing JSON checkpoint.
pub fn checkpoint_to_string(spec: &ModelSpec, params: &ParamVector) -> Result<String> {
    params.check(spec)?;
    let out = CheckpointOut {
        format: CHECKPOINT_FORMAT,
        version: 1,
        spec,
        params: params.values(),
    };
    serde_json::to_string_pretty(&out).map_err(|e| Error::Format(e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<(ModelSpec, ParamVector)> {
    let ck: CheckpointIn =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    ck.spec.validate()?;
    let params = ParamVector::from_values(&ck.spec, ck.params)?;
    Ok((ck.spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    let text = checkpoint_to_string(spec, params)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ParamVector)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
