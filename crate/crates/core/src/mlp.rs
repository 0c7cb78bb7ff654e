//! From-scratch fully connected feedforward network.
//!
//! Dense layers with per-layer ReLU/sigmoid activations, exact reverse-mode
//! gradients of the batch mean-squared error, and Adam with a
//! Nesterov-corrected first moment. Training is single-threaded over
//! mini-batches with a seeded shuffle, so fixed seeds reproduce trajectories
//! bit-exactly.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::Association;
use crate::dataset::decode_labels;
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Default optimizer hyperparameters.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Layered feedforward network. weights[l] is row-major N_l x N_{l-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradients, same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

/// First/second-moment accumulators and step counter of the optimizer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u32,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(mlp: &Mlp, alpha: f64) -> OptimizerState {
        OptimizerState {
            m_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            alpha,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn step(&self) -> u32 {
        self.step
    }
}

/// Training/validation error after one epoch, as mean squared error per
/// output entry (the usual reporting convention for sigmoid one-hot targets;
/// the training objective itself is the per-sample squared norm).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// The network shape used for association prediction: input 2K + M, hidden
/// layers 128/64/64 with ReLU, sigmoid, ReLU, and a sigmoid output of K * M
/// one-hot rows.
pub fn association_architecture(n_users: usize, n_bs: usize) -> (Vec<usize>, Vec<Activation>) {
    (
        vec![2 * n_users + n_bs, 128, 64, 64, n_users * n_bs],
        vec![Activation::Relu, Activation::Sigmoid, Activation::Relu, Activation::Sigmoid],
    )
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform initialization: weights uniform in
    /// +-sqrt(6 / (fan_in + fan_out)), biases zero, deterministic per seed.
    pub fn init(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Mlp> {
        if layer_sizes.len() < 2 {
            return Err(Error::domain("a network needs an input and an output layer"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::domain("layer sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::domain(format!(
                "expected {} activation tags, got {}",
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 1..layer_sizes.len() {
            let fan_in = layer_sizes[l - 1];
            let fan_out = layer_sizes[l];
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Forward pass: z_l = f_l(W_l z_{l-1} + b_l).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_size() {
            return Err(Error::domain(format!(
                "input length {} does not match input layer {}",
                features.len(),
                self.input_size()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature input"));
        }
        let mut current = features.to_vec();
        for l in 0..self.weights.len() {
            current = self.layer_forward(l, &current);
        }
        Ok(current)
    }

    fn layer_forward(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let n_out = self.layer_sizes[l + 1];
        let n_in = self.layer_sizes[l];
        let w = &self.weights[l];
        let act = self.activations[l];
        (0..n_out)
            .map(|n| {
                let row = &w[n * n_in..(n + 1) * n_in];
                let z = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + self.biases[l][n];
                act.apply(z)
            })
            .collect()
    }

    /// Mean of the squared Euclidean distances over the batch:
    /// `(1/B) sum_i ||pred_i - target_i||^2`.
    pub fn mse_loss(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let b = preds.len().max(1);
        preds
            .iter()
            .zip(targets)
            .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / b as f64
    }

    /// Exact gradients of the batch MSE with respect to every weight and
    /// bias, plus the loss itself.
    pub fn backward(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<(Gradients, f64)> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::domain("batch inputs and targets must pair up and be non-empty"));
        }
        let n_layers = self.weights.len();
        let mut grads = Gradients {
            d_weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        let batch = inputs.len() as f64;
        let mut loss = 0.0;

        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        for (x, y) in inputs.iter().zip(targets) {
            if x.len() != self.input_size() || y.len() != self.output_size() {
                return Err(Error::domain("sample dimensions do not match the network"));
            }
            activations.clear();
            activations.push(x.to_vec());
            for l in 0..n_layers {
                let next = self.layer_forward(l, activations.last().unwrap());
                activations.push(next);
            }
            let out = activations.last().unwrap();
            loss += out.iter().zip(*y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / batch;

            // delta = dLoss/dz at the current layer.
            let mut delta: Vec<f64> = out
                .iter()
                .zip(*y)
                .map(|(a, b)| {
                    2.0 * (a - b) / batch
                        * self.activations[n_layers - 1].derivative_from_output(*a)
                })
                .collect();
            for l in (0..n_layers).rev() {
                let n_in = self.layer_sizes[l];
                let prev = &activations[l];
                let dw = &mut grads.d_weights[l];
                for (n, &d) in delta.iter().enumerate() {
                    grads.d_biases[l][n] += d;
                    let row = &mut dw[n * n_in..(n + 1) * n_in];
                    for (slot, &p) in row.iter_mut().zip(prev) {
                        *slot += d * p;
                    }
                }
                if l > 0 {
                    let mut prev_delta = vec![0.0; n_in];
                    let w = &self.weights[l];
                    for (n, &d) in delta.iter().enumerate() {
                        let row = &w[n * n_in..(n + 1) * n_in];
                        for (slot, &wv) in prev_delta.iter_mut().zip(row) {
                            *slot += d * wv;
                        }
                    }
                    let act = self.activations[l - 1];
                    for (slot, &a) in prev_delta.iter_mut().zip(prev) {
                        *slot *= act.derivative_from_output(a);
                    }
                    delta = prev_delta;
                }
            }
        }
        Ok((grads, loss))
    }

    /// One Adam step with Nesterov-corrected first moment:
    /// `theta -= alpha * (beta1 m_hat + (1 - beta1) g / (1 - beta1^t)) / (sqrt(v_hat) + eps)`.
    pub fn nadam_step(&mut self, grads: &Gradients, state: &mut OptimizerState) {
        state.step += 1;
        let t = state.step as i32;
        let bias1 = 1.0 - state.beta1.powi(t);
        let bias2 = 1.0 - state.beta2.powi(t);
        let (alpha, beta1, beta2, epsilon) = (state.alpha, state.beta1, state.beta2, state.epsilon);

        let update = |param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let direction = beta1 * m_hat + (1.0 - beta1) * g / bias1;
                param[i] -= alpha * direction / (v_hat.sqrt() + epsilon);
            }
        };
        for l in 0..self.weights.len() {
            update(
                &mut self.weights[l],
                &grads.d_weights[l],
                &mut state.m_weights[l],
                &mut state.v_weights[l],
            );
            update(
                &mut self.biases[l],
                &grads.d_biases[l],
                &mut state.m_biases[l],
                &mut state.v_biases[l],
            );
        }
    }

    /// Full-pass mean loss without gradient work.
    pub fn evaluate_mse(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let out = self.forward(x)?;
            total += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / xs.len() as f64)
    }

    /// Mini-batch training: seeded shuffle every epoch, one optimizer step
    /// per batch, full-pass training and validation MSE after each epoch.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        &mut self,
        train_x: &[Vec<f64>],
        train_y: &[Vec<f64>],
        val_x: &[Vec<f64>],
        val_y: &[Vec<f64>],
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Vec<EpochMetrics>> {
        if train_x.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
            return Err(Error::domain("feature/label counts differ"));
        }
        let batch_size = batch_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = OptimizerState::new(self, learning_rate);
        let mut indices: Vec<usize> = (0..train_x.len()).collect();
        let mut metrics = Vec::with_capacity(epochs);

        for epoch in 1..=epochs {
            // Fisher-Yates on the index vector keeps the shuffle reproducible.
            for i in (1..indices.len()).rev() {
                let j = rng.random_range(0..=i);
                indices.swap(i, j);
            }
            for (batch_idx, chunk) in indices.chunks(batch_size).enumerate() {
                let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
                let ys: Vec<&[f64]> = chunk.iter().map(|&i| train_y[i].as_slice()).collect();
                let (grads, loss) = self.backward(&xs, &ys)?;
                if !loss.is_finite() {
                    return Err(Error::numerical(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                self.nadam_step(&grads, &mut state);
            }
            let dim = self.output_size() as f64;
            let train_mse = self.evaluate_mse(train_x, train_y)? / dim;
            let val_mse = self.evaluate_mse(val_x, val_y)? / dim;
            metrics.push(EpochMetrics { epoch, train_mse, val_mse });
        }
        Ok(metrics)
    }

    /// Decodes the network output into an association: per-user argmax over
    /// its BS slice, optionally repaired to respect capacities. The returned
    /// flag reports whether the association satisfies the capacities.
    pub fn predict_association(
        &self,
        features: &[f64],
        capacities: &[usize],
        repair: bool,
    ) -> Result<(Association, bool)> {
        let out = self.forward(features)?;
        let assoc = decode_labels(&out, capacities, repair)?;
        let feasible = assoc.is_feasible(capacities);
        Ok((assoc, feasible))
    }

    /// Serializes the model as a single-line JSON document.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        let doc = ModelFile {
            version: MODEL_SCHEMA_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        serde_json::to_writer(&mut writer, &doc)
            .map_err(|e| Error::format(format!("model serialization failed: {e}")))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Mlp> {
        let file = std::fs::File::open(path)?;
        let doc: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::format(format!("model file unreadable: {e}")))?;
        if doc.version != MODEL_SCHEMA_VERSION {
            return Err(Error::format(format!(
                "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
                doc.version
            )));
        }
        if doc.layer_sizes.len() < 2
            || doc.activations.len() != doc.layer_sizes.len() - 1
            || doc.weights.len() != doc.layer_sizes.len() - 1
            || doc.biases.len() != doc.layer_sizes.len() - 1
        {
            return Err(Error::format("model file has inconsistent layer counts"));
        }
        for l in 1..doc.layer_sizes.len() {
            if doc.weights[l - 1].len() != doc.layer_sizes[l] * doc.layer_sizes[l - 1]
                || doc.biases[l - 1].len() != doc.layer_sizes[l]
            {
                return Err(Error::format(format!(
                    "layer {l} parameter shapes are inconsistent"
                )));
            }
        }
        Ok(Mlp {
            layer_sizes: doc.layer_sizes,
            activations: doc.activations,
            weights: doc.weights,
            biases: doc.biases,
        })
    }

    /// Direct parameter access for test oracles.
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(sizes: &[usize], acts: &[Activation], seed: u64) -> Mlp {
        Mlp::init(sizes, acts, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = tiny_net(&[2, 3], &[Activation::Sigmoid], 9);
        let b = tiny_net(&[2, 3], &[Activation::Sigmoid], 9);
        assert_eq!(a, b);
        assert!(a.biases().iter().flatten().all(|&v| v == 0.0));
        let c = tiny_net(&[2, 3], &[Activation::Sigmoid], 10);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_degenerate_shapes() {
        assert!(Mlp::init(&[4], &[], 0).is_err());
        assert!(Mlp::init(&[4, 0], &[Activation::Relu], 0).is_err());
        assert!(Mlp::init(&[4, 2], &[], 0).is_err());
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let net = tiny_net(&[8, 4], &[Activation::Relu], 3);
        let limit = (6.0 / 12.0f64).sqrt();
        assert!(net.weights()[0].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn association_net_has_expected_parameter_count() {
        // 84-128-64-64-160 with biases: counted layer by layer.
        let (sizes, acts) = association_architecture(40, 4);
        assert_eq!(sizes, vec![84, 128, 64, 64, 160]);
        let net = Mlp::init(&sizes, &acts, 0).unwrap();
        let by_hand: usize = (1..sizes.len()).map(|l| sizes[l] * sizes[l - 1] + sizes[l]).sum();
        assert_eq!(net.parameter_count(), by_hand);
        assert_eq!(net.parameter_count(), 33_696);
    }

    #[test]
    fn zero_net_with_sigmoid_outputs_half() {
        let mut net = tiny_net(&[3, 4], &[Activation::Sigmoid], 1);
        for w in net.weights_mut() {
            w.fill(0.0);
        }
        let out = net.forward(&[0.3, -0.7, 2.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relu_identity_layer_clamps_negatives() {
        let mut net = tiny_net(&[2, 2], &[Activation::Relu], 1);
        net.weights_mut()[0].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let out = net.forward(&[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net = tiny_net(&[2, 2], &[Activation::Relu], 1);
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.forward(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn sigmoid_outputs_stay_in_unit_interval() {
        let net = tiny_net(&[4, 8, 3], &[Activation::Relu, Activation::Sigmoid], 77);
        let out = net.forward(&[1.0, -0.5, 0.3, 0.0]).unwrap();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        // Extreme pre-activations saturate in f64 but stay within [0, 1],
        // keeping argmax decoding total.
        let saturated = net.forward(&[1e4, -1e4, 1e4, 0.0]).unwrap();
        assert!(saturated.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn forward_matches_hand_rolled_two_layer_oracle() {
        let net = tiny_net(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], 123);
        let x = [0.25, -1.5, 0.75];
        let got = net.forward(&x).unwrap();

        // Independent nested-loop evaluation.
        let w0 = net.weights()[0].clone();
        let w1 = net.weights()[1].clone();
        let mut hidden = [0.0f64; 4];
        for n in 0..4 {
            let mut z = 0.0;
            for j in 0..3 {
                z += w0[n * 3 + j] * x[j];
            }
            hidden[n] = z.max(0.0);
        }
        for n in 0..2 {
            let mut z = 0.0;
            for j in 0..4 {
                z += w1[n * 4 + j] * hidden[j];
            }
            let want = 1.0 / (1.0 + (-z).exp());
            assert!((got[n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradients() {
        let net = tiny_net(&[2, 2], &[Activation::Relu], 5);
        let x = [0.5, 0.25];
        let y = net.forward(&x).unwrap();
        let (grads, loss) = net.backward(&[&x], &[&y]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.d_weights.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.d_biases.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_gradient_matches_pencil_and_paper() {
        // One sigmoid neuron: a = s(w x + b), loss = (a - y)^2.
        let mut net = tiny_net(&[1, 1], &[Activation::Sigmoid], 0);
        net.weights_mut()[0][0] = 0.5;
        net.biases_mut()[0][0] = -0.25;
        let (x, y) = (0.8, 0.3);
        let (grads, loss) = net.backward(&[&[x]], &[&[y]]).unwrap();

        let z = 0.5 * x - 0.25;
        let a = 1.0 / (1.0 + (-z).exp());
        let dz = 2.0 * (a - y) * a * (1.0 - a);
        assert!((loss - (a - y) * (a - y)).abs() < 1e-15);
        assert!((grads.d_weights[0][0] - dz * x).abs() < 1e-15);
        assert!((grads.d_biases[0][0] - dz).abs() < 1e-15);
    }

    #[test]
    fn nadam_leaves_parameters_alone_on_zero_gradient() {
        let mut net = tiny_net(&[2, 2], &[Activation::Sigmoid], 8);
        let before = net.clone();
        let grads = Gradients { d_weights: vec![vec![0.0; 4]], d_biases: vec![vec![0.0; 2]] };
        let mut state = OptimizerState::new(&net, DEFAULT_LEARNING_RATE);
        net.nadam_step(&grads, &mut state);
        assert_eq!(net, before);
    }

    #[test]
    fn nadam_moves_against_the_gradient() {
        let mut net = tiny_net(&[1, 1], &[Activation::Relu], 8);
        let w0 = net.weights()[0][0];
        let grads = Gradients { d_weights: vec![vec![2.5]], d_biases: vec![vec![-2.5]] };
        let mut state = OptimizerState::new(&net, DEFAULT_LEARNING_RATE);
        net.nadam_step(&grads, &mut state);
        assert!(net.weights()[0][0] < w0);
        assert!(net.biases()[0][0] > 0.0);
    }

    #[test]
    fn nadam_matches_scalar_recurrence_oracle() {
        // Three steps with constant gradient 1 on a single parameter.
        let mut net = tiny_net(&[1, 1], &[Activation::Relu], 8);
        net.weights_mut()[0][0] = 0.7;
        let mut state = OptimizerState::new(&net, DEFAULT_LEARNING_RATE);
        let grads = Gradients { d_weights: vec![vec![1.0]], d_biases: vec![vec![0.0]] };

        // Independent recurrence.
        let (alpha, b1, b2, eps) =
            (DEFAULT_LEARNING_RATE, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON);
        let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            net.nadam_step(&grads, &mut state);

            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -=
                alpha * (b1 * m_hat + (1.0 - b1) * g / (1.0 - b1.powi(t))) / (v_hat.sqrt() + eps);
            assert!(
                (net.weights()[0][0] - theta).abs() < 1e-12,
                "step {t}: {} vs {theta}",
                net.weights()[0][0]
            );
        }
    }

    #[test]
    fn zero_epochs_returns_empty_metrics_and_leaves_net_unchanged() {
        let mut net = tiny_net(&[2, 2], &[Activation::Sigmoid], 3);
        let before = net.clone();
        let xs = vec![vec![0.1, 0.9]];
        let ys = vec![vec![1.0, 0.0]];
        let metrics = net.train(&xs, &ys, &[], &[], 0, 4, 1e-3, 7).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let make_data = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let xs: Vec<Vec<f64>> =
                (0..64).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let ys: Vec<Vec<f64>> =
                xs.iter().map(|x| vec![if x[0] + x[1] > 1.0 { 1.0 } else { 0.0 }]).collect();
            (xs, ys)
        };
        let (xs, ys) = make_data();
        let mut net = tiny_net(&[2, 8, 1], &[Activation::Relu, Activation::Sigmoid], 4);
        let metrics = net.train(&xs, &ys, &xs, &ys, 30, 16, 1e-2, 11).unwrap();
        assert_eq!(metrics.len(), 30);
        assert!(metrics.last().unwrap().train_mse < metrics[0].train_mse);

        let mut net2 = tiny_net(&[2, 8, 1], &[Activation::Relu, Activation::Sigmoid], 4);
        let metrics2 = net2.train(&xs, &ys, &xs, &ys, 30, 16, 1e-2, 11).unwrap();
        assert_eq!(net, net2);
        for (a, b) in metrics.iter().zip(&metrics2) {
            assert_eq!(a.train_mse.to_bits(), b.train_mse.to_bits());
            assert_eq!(a.val_mse.to_bits(), b.val_mse.to_bits());
        }
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = tiny_net(&[4, 8, 3], &[Activation::Relu, Activation::Sigmoid], 21);
        net.save(&path).unwrap();
        let loaded = Mlp::load(&path).unwrap();
        assert_eq!(net, loaded);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let a = net.forward(&x).unwrap();
            let b = loaded.forward(&x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_model_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = tiny_net(&[2, 2], &[Activation::Relu], 21);
        net.save(&path).unwrap();
        let full = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        assert!(matches!(Mlp::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = tiny_net(&[2, 2], &[Activation::Relu], 21);
        net.save(&path).unwrap();
        let full = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, full.replace("\"version\":1", "\"version\":999")).unwrap();
        match Mlp::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
