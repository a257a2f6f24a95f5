//! From-scratch multilayer perceptron: ELU hidden layers, affine output,
//! exact reverse-mode gradients, and a plain Adam optimizer working on
//! flattened parameter vectors.

use crate::linalg::DenseMatrix;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Hidden-layer activation tag (the output layer is always affine).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
}

fn elu(t: f64) -> f64 {
    if t >= 0.0 {
        t
    } else {
        t.exp_m1()
    }
}

/// ELU derivative recovered from ELU's own output value.
fn elu_deriv_from_value(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    /// One (out x in) matrix per layer.
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Fan-in-scaled uniform initialization (bound sqrt(6 / fan_in)), zero biases.
pub fn mlp_init(layer_dims: &[usize], seed: u64) -> Result<Mlp, NeuralError> {
    if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
        return Err(NeuralError::BadLayerDims(layer_dims.to_vec()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for l in 0..layer_dims.len() - 1 {
        let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut w = DenseMatrix::zeros(fan_out, fan_in);
        for r in 0..fan_out {
            for c in 0..fan_in {
                w.set(r, c, rng.uniform(-bound, bound));
            }
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Mlp {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        activation: Activation::Elu,
    })
}

/// Post-activation values of every layer, kept for the backward pass.
/// `activations[0]` is the input, the last entry is the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Per-parameter gradients, mirroring the network's shapes.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.n_rows(), w.n_cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            for r in 0..w.n_rows() {
                for c in 0..w.n_cols() {
                    w.add_to(r, c, ow.get(r, c));
                }
            }
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            let (rows, cols) = (w.n_rows(), w.n_cols());
            for r in 0..rows {
                for c in 0..cols {
                    w.set(r, c, w.get(r, c) * s);
                }
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.clear();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            out.extend_from_slice(b);
        }
    }
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.n_rows() * w.n_cols())
            .sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let mut cache = self.forward_cached(input)?;
        Ok(cache.activations.pop().expect("non-empty activation stack"))
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NeuralError> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::InputLengthMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for l in 0..n_layers {
            let w = &self.weights[l];
            let prev = &activations[l];
            let mut z = self.biases[l].clone();
            for r in 0..w.n_rows() {
                let row = w.row(r);
                let mut acc = 0.0;
                for c in 0..row.len() {
                    acc += row[c] * prev[c];
                }
                z[r] += acc;
            }
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    *v = elu(*v);
                }
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse pass. Returns parameter gradients and the gradient with
    /// respect to the input, given the gradient of the loss with respect to
    /// the network output.
    pub fn backward(&self, cache: &ForwardCache, output_cotangent: &[f64]) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
        if output_cotangent.len() != self.output_dim() {
            return Err(NeuralError::InputLengthMismatch {
                expected: self.output_dim(),
                got: output_cotangent.len(),
            });
        }
        let n_layers = self.weights.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = output_cotangent.to_vec();
        for l in (0..n_layers).rev() {
            let prev = &cache.activations[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            for r in 0..w.n_rows() {
                let d = delta[r];
                if d != 0.0 {
                    for c in 0..w.n_cols() {
                        gw.add_to(r, c, d * prev[c]);
                    }
                }
                grads.biases[l][r] += d;
            }
            // dJ/d(previous activation).
            let mut prev_grad = vec![0.0; w.n_cols()];
            for r in 0..w.n_rows() {
                let d = delta[r];
                if d != 0.0 {
                    let row = w.row(r);
                    for c in 0..row.len() {
                        prev_grad[c] += row[c] * d;
                    }
                }
            }
            if l > 0 {
                // Previous layer is a hidden layer: fold in the ELU derivative.
                for (c, g) in prev_grad.iter_mut().enumerate() {
                    *g *= elu_deriv_from_value(cache.activations[l][c]);
                }
            }
            delta = prev_grad;
        }
        Ok((grads, delta))
    }

    /// Concatenated parameter vector (per layer: weights row-major, then bias).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "flat parameter length");
        let mut cursor = 0;
        for l in 0..self.weights.len() {
            let (rows, cols) = (self.weights[l].n_rows(), self.weights[l].n_cols());
            for r in 0..rows {
                for c in 0..cols {
                    self.weights[l].set(r, c, params[cursor]);
                    cursor += 1;
                }
            }
            for k in 0..self.biases[l].len() {
                self.biases[l][k] = params[cursor];
                cursor += 1;
            }
        }
    }
}

/// One-call reverse-mode gradients: runs the forward pass internally.
pub fn mlp_backward(
    net: &Mlp,
    input: &[f64],
    output_cotangent: &[f64],
) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
    let cache = net.forward_cached(input)?;
    net.backward(&cache, output_cotangent)
}

/// Adam state over a flattened parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Standard Adam update with bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.first_moment.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
