//! Small feed-forward networks with analytic backpropagation and an
//! adaptive-moment optimizer. No framework: the architecture is fixed at
//! two tanh hidden layers and a linear head, and parameters live in one
//! flat vector so checkpointing and optimizer state stay trivial.

use rand_chacha::ChaCha8Rng;

use crate::disturbance::unit_uniform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: [usize; 2],
    pub output: usize,
}

impl MlpSpec {
    pub fn param_len(&self) -> usize {
        let [h1, h2] = self.hidden;
        h1 * self.input + h1 + h2 * h1 + h2 + self.output * h2 + self.output
    }
}

/// Two-hidden-layer perceptron over a flat parameter vector, layout
/// `[W1 | b1 | W2 | b2 | W3 | b3]` with row-major weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Forward-pass activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpActivations {
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        Mlp {
            spec,
            params: vec![0.0; spec.param_len()],
        }
    }

    /// Uniform Glorot initialization; biases start at zero and the output
    /// layer is additionally scaled (small values keep early policies close
    /// to the action-space center).
    pub fn glorot_init(spec: MlpSpec, rng: &mut ChaCha8Rng, output_scale: f64) -> Self {
        let mut mlp = Mlp::zeros(spec);
        let dims = [
            (spec.input, spec.hidden[0]),
            (spec.hidden[0], spec.hidden[1]),
            (spec.hidden[1], spec.output),
        ];
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if layer == 2 { output_scale } else { 1.0 };
            for w in &mut mlp.params[offset..offset + fan_out * fan_in] {
                *w = scale * bound * (2.0 * unit_uniform(rng) - 1.0);
            }
            offset += fan_out * fan_in + fan_out; // weights then zero biases
        }
        mlp
    }

    fn layer_offsets(&self) -> [usize; 6] {
        let MlpSpec { input, hidden: [h1, h2], output } = self.spec;
        let w1 = 0;
        let b1 = w1 + h1 * input;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + output * h2;
        [w1, b1, w2, b2, w3, b3]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpActivations {
        let MlpSpec { input, hidden: [h1, h2], output } = self.spec;
        debug_assert_eq!(x.len(), input);
        let [w1, b1, w2, b2, w3, b3] = self.layer_offsets();
        let p = &self.params;

        let mut a1 = vec![0.0; h1];
        for i in 0..h1 {
            let row = w1 + i * input;
            let mut z = p[b1 + i];
            for j in 0..input {
                z += p[row + j] * x[j];
            }
            a1[i] = z.tanh();
        }
        let mut a2 = vec![0.0; h2];
        for i in 0..h2 {
            let row = w2 + i * h1;
            let mut z = p[b2 + i];
            for j in 0..h1 {
                z += p[row + j] * a1[j];
            }
            a2[i] = z.tanh();
        }
        let mut out = vec![0.0; output];
        for i in 0..output {
            let row = w3 + i * h2;
            let mut z = p[b3 + i];
            for j in 0..h2 {
                z += p[row + j] * a2[j];
            }
            out[i] = z;
        }
        MlpActivations {
            hidden1: a1,
            hidden2: a2,
            output: out,
        }
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given the loss gradient
    /// with respect to the network output.
    pub fn backward(&self, x: &[f64], acts: &MlpActivations, d_out: &[f64], grad: &mut [f64]) {
        let MlpSpec { input, hidden: [h1, h2], output } = self.spec;
        debug_assert_eq!(grad.len(), self.spec.param_len());
        debug_assert_eq!(d_out.len(), output);
        let [w1o, b1o, w2o, b2o, w3o, b3o] = self.layer_offsets();
        let p = &self.params;

        let mut d_a2 = vec![0.0; h2];
        for i in 0..output {
            let row = w3o + i * h2;
            for j in 0..h2 {
                grad[row + j] += d_out[i] * acts.hidden2[j];
                d_a2[j] += p[row + j] * d_out[i];
            }
            grad[b3o + i] += d_out[i];
        }

        let mut d_a1 = vec![0.0; h1];
        for i in 0..h2 {
            let dz = d_a2[i] * (1.0 - acts.hidden2[i] * acts.hidden2[i]);
            let row = w2o + i * h1;
            for j in 0..h1 {
                grad[row + j] += dz * acts.hidden1[j];
                d_a1[j] += p[row + j] * dz;
            }
            grad[b2o + i] += dz;
        }

        for i in 0..h1 {
            let dz = d_a1[i] * (1.0 - acts.hidden1[i] * acts.hidden1[i]);
            let row = w1o + i * input;
            for j in 0..input {
                grad[row + j] += dz * x[j];
            }
            grad[b1o + i] += dz;
        }
    }
}

/// Adaptive-moment estimation with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step: 0,
        }
    }

    pub fn apply(&mut self, opts: &AdamParams, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grad.len() != params.len() {
            return Err(Error::Internal(format!(
                "optimizer shape mismatch: state {}, params {}, grad {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - opts.beta1.powi(t);
        let bias2 = 1.0 - opts.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = opts.beta1 * self.first_moment[i] + (1.0 - opts.beta1) * g;
            self.second_moment[i] = opts.beta2 * self.second_moment[i] + (1.0 - opts.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= opts.learning_rate * m_hat / (v_hat.sqrt() + opts.epsilon);
        }
        Ok(())
    }
}

/// Central finite-difference gradient of `loss` at `params`.
pub fn finite_difference_gradient(
    params: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    step: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let h = step * params[i].abs().max(1.0);
        work[i] = params[i] + h;
        let plus = loss(&work);
        work[i] = params[i] - h;
        let minus = loss(&work);
        work[i] = params[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest per-coordinate relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

pub fn seeded_rng(words: &[u64]) -> ChaCha8Rng {
    use rand_core::SeedableRng;
    ChaCha8Rng::seed_from_u64(crate::disturbance::mix_key(words))
}
