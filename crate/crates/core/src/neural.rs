//! Multilayer perceptron with hand-written reverse-mode differentiation.
//!
//! One model type houses both the noise predictor and the noise-aware
//! classifier. Parameters live in a single flat `Vec<f64>`; each layer
//! stores its weight matrix (`out × in`, row-major) followed by its bias.
//! That is also the checkpoint payload order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, logsumexp, DenseVector, RngStream};

/// Number of features appended to the data vector to encode the timestep.
pub const TIME_FEATURES: usize = 3;

/// `[t/T, sin(2πt/T), cos(2πt/T)]`
pub fn time_features(t: usize, total: usize) -> [f64; TIME_FEATURES] {
    let phase = t as f64 / total as f64;
    let angle = 2.0 * std::f64::consts::PI * phase;
    [phase, angle.sin(), angle.cos()]
}

/// Data vector with the time encoding appended.
pub fn conditioned_input(x: &[f64], t: usize, total: usize) -> DenseVector {
    let mut v = Vec::with_capacity(x.len() + TIME_FEATURES);
    v.extend_from_slice(x);
    v.extend_from_slice(&time_features(t, total));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z·sigmoid(z)`
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    slots: Vec<LayerSlot>,
    params: Vec<f64>,
}

pub fn parameter_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        Self::from_params(layer_dims, activation, vec![0.0; parameter_count(layer_dims)])
    }

    /// Weights drawn from N(0, 1/fan_in), biases zero.
    pub fn random(layer_dims: &[usize], activation: Activation, rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, activation)?;
        for slot in model.slots.clone() {
            let std = 1.0 / (slot.inputs as f64).sqrt();
            let w = &mut model.params[slot.weight_offset..slot.bias_offset];
            for wi in w.iter_mut() {
                *wi = std * rng.standard_normal();
            }
        }
        Ok(model)
    }

    pub fn from_params(layer_dims: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must have at least two positive entries, got {layer_dims:?}"
            )));
        }
        let expected = parameter_count(layer_dims);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        let mut slots = Vec::with_capacity(layer_dims.len() - 1);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            slots.push(LayerSlot {
                inputs,
                outputs,
                weight_offset: offset,
                bias_offset: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            slots,
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix of layer `l` as a row-major `out × in` slice.
    pub fn weights(&self, l: usize) -> &[f64] {
        let s = self.slots[l];
        &self.params[s.weight_offset..s.bias_offset]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let s = self.slots[l];
        &self.params[s.bias_offset..s.bias_offset + s.outputs]
    }

    pub fn forward(&self, input: &[f64]) -> Result<DenseVector> {
        self.check_input(input.len(), 1)?;
        Ok(self.forward_batch(input, 1))
    }

    /// Row-major batch forward pass; `inputs.len() == batch * input_dim`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        let mut current = inputs.to_vec();
        let last = self.slots.len() - 1;
        for (l, slot) in self.slots.iter().enumerate() {
            let mut next = self.affine(slot, &current, batch);
            if l < last {
                for z in next.iter_mut() {
                    *z = self.activation.apply(*z);
                }
            }
            current = next;
        }
        current
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        let expected = self.input_dim() * batch;
        if len != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: len,
            });
        }
        Ok(())
    }

    fn affine(&self, slot: &LayerSlot, x: &[f64], batch: usize) -> Vec<f64> {
        let w = &self.params[slot.weight_offset..slot.bias_offset];
        let b = &self.params[slot.bias_offset..slot.bias_offset + slot.outputs];
        let mut out = vec![0.0; batch * slot.outputs];
        for (xb, ob) in x.chunks_exact(slot.inputs).zip(out.chunks_exact_mut(slot.outputs)) {
            for (o, (row, bias)) in ob.iter_mut().zip(w.chunks_exact(slot.inputs).zip(b)) {
                *o = dot(row, xb) + bias;
            }
        }
        out
    }

    /// Forward pass retaining per-layer pre-activations for backprop.
    fn forward_cached(&self, inputs: &[f64], batch: usize) -> ForwardCache {
        let mut layer_inputs = Vec::with_capacity(self.slots.len());
        let mut pre_acts = Vec::with_capacity(self.slots.len());
        let mut current = inputs.to_vec();
        let last = self.slots.len() - 1;
        for (l, slot) in self.slots.iter().enumerate() {
            let z = self.affine(slot, &current, batch);
            let next = if l < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            layer_inputs.push(current);
            pre_acts.push(z);
            current = next;
        }
        ForwardCache {
            batch,
            layer_inputs,
            pre_acts,
            output: current,
        }
    }

    /// Reverse sweep. `grad_output` is dL/d(output) per batch row; returns
    /// the parameter gradient summed over the batch and, when requested,
    /// dL/d(input) per row.
    fn backward(&self, cache: &ForwardCache, grad_output: Vec<f64>, want_input: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let batch = cache.batch;
        let mut grad_params = vec![0.0; self.params.len()];
        let mut delta = grad_output;
        let last = self.slots.len() - 1;
        for l in (0..self.slots.len()).rev() {
            let slot = self.slots[l];
            if l < last {
                for (d, &z) in delta.iter_mut().zip(&cache.pre_acts[l]) {
                    *d *= self.activation.derivative(z);
                }
            }
            let x = &cache.layer_inputs[l];
            {
                let (gw, gb) = grad_params[slot.weight_offset..slot.bias_offset + slot.outputs]
                    .split_at_mut(slot.inputs * slot.outputs);
                for (db, xb) in delta.chunks_exact(slot.outputs).zip(x.chunks_exact(slot.inputs)) {
                    for (o, &d) in db.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, xb, &mut gw[o * slot.inputs..(o + 1) * slot.inputs]);
                        }
                        gb[o] += d;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let w = &self.params[slot.weight_offset..slot.bias_offset];
            let mut prev = vec![0.0; batch * slot.inputs];
            for (db, pb) in delta.chunks_exact(slot.outputs).zip(prev.chunks_exact_mut(slot.inputs)) {
                for (&d, row) in db.iter().zip(w.chunks_exact(slot.inputs)) {
                    if d != 0.0 {
                        axpy(d, row, pb);
                    }
                }
            }
            delta = prev;
        }
        let input_grad = if want_input { Some(delta) } else { None };
        (grad_params, input_grad)
    }
}

struct ForwardCache {
    batch: usize,
    layer_inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// A probability vector over K classes with matching log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ClassDistribution {
    /// Builds a distribution from explicit probabilities (must sum to 1
    /// within 1e-9 and lie in [0, 1]).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probability outside [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn uniform(k: usize) -> Self {
        softmax(&vec![0.0; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Numerically stable softmax. `logits` must be nonempty and finite.
pub fn softmax(logits: &[f64]) -> ClassDistribution {
    let lse = logsumexp(logits);
    let log_probs: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
    let probs = log_probs.iter().map(|lp| lp.exp()).collect();
    ClassDistribution { probs, log_probs }
}

pub fn cross_entropy(dist: &ClassDistribution, label: usize) -> Result<f64> {
    let k = dist.num_classes();
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(-dist.log_probs[label])
}

/// A per-example loss on the network output.
pub trait OutputLoss {
    type Target;

    /// Returns the loss and writes dL/d(output) into `grad`.
    fn loss_and_grad(&self, output: &[f64], target: &Self::Target, grad: &mut [f64]) -> Result<f64>;
}

/// `‖output − target‖²`
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredError;

impl OutputLoss for SquaredError {
    type Target = Vec<f64>;

    fn loss_and_grad(&self, output: &[f64], target: &Vec<f64>, grad: &mut [f64]) -> Result<f64> {
        if target.len() != output.len() {
            return Err(Error::DimensionMismatch {
                expected: output.len(),
                found: target.len(),
            });
        }
        let mut loss = 0.0;
        for ((g, o), y) in grad.iter_mut().zip(output).zip(target) {
            let r = o - y;
            loss += r * r;
            *g = 2.0 * r;
        }
        Ok(loss)
    }
}

/// Mean loss over a batch and its gradient with respect to every parameter.
pub fn grad_params<L: OutputLoss>(
    model: &MlpModel,
    inputs: &[f64],
    targets: &[L::Target],
    loss: &L,
) -> Result<(f64, Vec<f64>)> {
    let batch = targets.len();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    model.check_input(inputs.len(), batch)?;
    let cache = model.forward_cached(inputs, batch);
    let out_dim = model.output_dim();
    let mut grad_out = vec![0.0; batch * out_dim];
    let mut total = 0.0;
    let inv = 1.0 / batch as f64;
    for ((o, g), target) in cache
        .output
        .chunks_exact(out_dim)
        .zip(grad_out.chunks_exact_mut(out_dim))
        .zip(targets)
    {
        total += loss.loss_and_grad(o, target, g)?;
        for gi in g.iter_mut() {
            *gi *= inv;
        }
    }
    let (grad, _) = model.backward(&cache, grad_out, false);
    Ok((total * inv, grad))
}

/// Softmax of the model output together with ∇_input log p(label | input).
pub fn log_prob_and_input_grad(model: &MlpModel, input: &[f64], label: usize) -> Result<(ClassDistribution, DenseVector)> {
    model.check_input(input.len(), 1)?;
    let k = model.output_dim();
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let cache = model.forward_cached(input, 1);
    let dist = softmax(&cache.output);
    // d log p_label / d logit_j = 1[j = label] − p_j
    let grad_out: Vec<f64> = dist
        .probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == label { 1.0 - p } else { -p })
        .collect();
    let (_, input_grad) = model.backward(&cache, grad_out, true);
    Ok((dist, input_grad.expect("input gradient requested")))
}

pub fn grad_input_log_prob(model: &MlpModel, input: &[f64], label: usize) -> Result<DenseVector> {
    log_prob_and_input_grad(model, input, label).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(model: &mut MlpModel, gradient: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = model.num_params();
    if gradient.len() != n || state.first_moment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: gradient.len(),
        });
    }
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, &g), m), v) in model
        .params
        .iter_mut()
        .zip(gradient)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}
