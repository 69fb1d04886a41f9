//! Preference prediction network.
//!
//! A small fully connected network maps a (user, query) feature pair to the
//! per-product preference weights the ranker dots against rank feature
//! vectors. Hidden layers use relu, the output layer sigmoid, and training
//! is SGD on mean-squared error against each user's latent preference
//! vector. Forward passes go through the shared [`kernels`] so the micro
//! benchmark times the same code the serving path runs.
//!
//! [`kernels`]: crate::model::kernels

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::datagen::{QueryLogEntry, UserRecord};
use crate::error::CoreError;
use crate::hash::{fnv1a64, fnv1a64_continue, hash_to_unit};
use crate::index::tokenize;
use crate::model::kernels::{dense, relu, sigmoid};
use crate::model::{Hyperparams, TrainStats};
use crate::PREFERENCE_DIM;

/// Dimensions of the hashed user and query feature blocks. The network's
/// input layer is their concatenation.
pub const USER_FEATURE_DIM: usize = 16;
pub const QUERY_FEATURE_DIM: usize = 16;
pub const INPUT_DIM: usize = USER_FEATURE_DIM + QUERY_FEATURE_DIM;

/// Sigmoid outputs are clamped away from exactly 0 and 1 so downstream
/// consumers can rely on strictly interior preference weights even for
/// saturated pre-activations.
const OUTPUT_CLAMP: f32 = 1e-7;

/// Deterministic per-user feature vector derived by hashing the user id.
/// Distinct users get effectively independent pseudo-random vectors, which
/// is what lets the network memorize per-user preferences.
pub fn user_features(user_id: u64) -> Vec<f32> {
    (0..USER_FEATURE_DIM)
        .map(|i| {
            let h = fnv1a64_continue(fnv1a64(&user_id.to_le_bytes()), &(i as u64).to_le_bytes());
            hash_to_unit(h)
        })
        .collect()
}

/// Hashed bag-of-tokens query features, scaled by token count.
pub fn query_features(tokens: &[String]) -> Vec<f32> {
    let mut v = vec![0.0f32; QUERY_FEATURE_DIM];
    if tokens.is_empty() {
        return v;
    }
    for tok in tokens {
        let b = (fnv1a64(tok.as_bytes()) % QUERY_FEATURE_DIM as u64) as usize;
        v[b] += 1.0;
    }
    let inv = 1.0 / tokens.len() as f32;
    for x in v.iter_mut() {
        *x *= inv;
    }
    v
}

/// Gradients of one example's MSE loss with respect to every parameter,
/// shaped exactly like the network's weight and bias storage.
#[derive(Debug, Clone)]
pub struct PreferenceGradients {
    pub loss: f64,
    pub d_weights: Vec<Vec<f32>>,
    pub d_biases: Vec<Vec<f32>>,
}

/// Fully connected network: relu hidden layers, sigmoid output. Weights are
/// stored row-major, `sizes[l+1]` rows by `sizes[l]` columns per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceNet {
    sizes: Vec<usize>,
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

impl PreferenceNet {
    /// Seeded initialization: weights uniform in ±1/sqrt(fan_in), biases
    /// zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, CoreError> {
        if sizes.len() < 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "network needs at least input and output layers, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(CoreError::ShapeMismatch(format!(
                "layer sizes must be positive, got {sizes:?}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f32).sqrt();
            weights.push(
                (0..fan_out * fan_in)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0f32; fan_out]);
        }
        Ok(PreferenceNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parameters(
        sizes: Vec<usize>,
        weights: Vec<Vec<f32>>,
        biases: Vec<Vec<f32>>,
    ) -> Result<Self, CoreError> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "inconsistent layer counts: sizes {}, weights {}, biases {}",
                sizes.len(),
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..weights.len() {
            if weights[l].len() != sizes[l + 1] * sizes[l] || biases[l].len() != sizes[l + 1] {
                return Err(CoreError::ShapeMismatch(format!(
                    "layer {l} parameter shapes disagree with sizes {sizes:?}"
                )));
            }
        }
        Ok(PreferenceNet {
            sizes,
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<f32>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f32>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Forward pass. Output components are strictly inside (0, 1).
    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, CoreError> {
        if input.len() != self.sizes[0] {
            return Err(CoreError::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.sizes[0]
            )));
        }
        let mut act = input.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (m, k) = (self.sizes[l + 1], self.sizes[l]);
            let mut next = vec![0.0f32; m];
            dense(&self.weights[l], &act, m, k, 1, &mut next);
            for (n, b) in next.iter_mut().zip(&self.biases[l]) {
                *n += b;
            }
            if l == last {
                sigmoid(&mut next);
                for v in next.iter_mut() {
                    *v = v.clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP);
                }
            } else {
                relu(&mut next);
            }
            act = next;
        }
        Ok(act)
    }

    /// MSE loss of one example, evaluated entirely in f64 for the
    /// finite-difference gradient checks.
    pub fn example_loss(&self, input: &[f32], target: &[f32]) -> Result<f64, CoreError> {
        if input.len() != self.sizes[0] || target.len() != self.output_dim() {
            return Err(CoreError::ShapeMismatch(
                "example shape disagrees with network".into(),
            ));
        }
        let mut act: Vec<f64> = input.iter().map(|&x| x as f64).collect();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (m, k) = (self.sizes[l + 1], self.sizes[l]);
            let mut next = vec![0.0f64; m];
            for i in 0..m {
                let row = &self.weights[l][i * k..i * k + k];
                let mut acc = self.biases[l][i] as f64;
                for (w, a) in row.iter().zip(&act) {
                    acc += *w as f64 * a;
                }
                next[i] = acc;
            }
            if l == last {
                for v in next.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            } else {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            act = next;
        }
        let a = self.output_dim() as f64;
        Ok(act
            .iter()
            .zip(target)
            .map(|(o, &t)| (o - t as f64).powi(2))
            .sum::<f64>()
            / a)
    }

    /// Backpropagation for one example. Writes parameter gradients into
    /// `grads` (shaped like the network) and returns the example loss. The
    /// training loop reuses one `PreferenceGradients` allocation across
    /// steps.
    fn backprop_into(
        &self,
        input: &[f32],
        target: &[f32],
        grads: &mut PreferenceGradients,
    ) -> Result<(), CoreError> {
        if target.len() != self.output_dim() {
            return Err(CoreError::ShapeMismatch(format!(
                "target has {} values, network outputs {}",
                target.len(),
                self.output_dim()
            )));
        }
        // Forward, keeping activations. The output layer keeps its raw
        // sigmoid value (no clamp) so gradients stay exact.
        let mut acts: Vec<Vec<f32>> = vec![input.to_vec()];
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (m, k) = (self.sizes[l + 1], self.sizes[l]);
            let mut next = vec![0.0f32; m];
            dense(&self.weights[l], &acts[l], m, k, 1, &mut next);
            for (n, b) in next.iter_mut().zip(&self.biases[l]) {
                *n += b;
            }
            if l == last {
                sigmoid(&mut next);
            } else {
                relu(&mut next);
            }
            acts.push(next);
        }

        let out = acts.last().unwrap();
        let a = self.output_dim() as f32;
        grads.loss = out
            .iter()
            .zip(target)
            .map(|(&o, &t)| ((o - t) as f64).powi(2))
            .sum::<f64>()
            / a as f64;

        // Output delta: dL/dz = 2(a - t)/A * a * (1 - a).
        let mut delta: Vec<f32> = out
            .iter()
            .zip(target)
            .map(|(&o, &t)| 2.0 * (o - t) / a * o * (1.0 - o))
            .collect();

        for l in (0..self.weights.len()).rev() {
            let (m, k) = (self.sizes[l + 1], self.sizes[l]);
            let below = &acts[l];
            let dw = &mut grads.d_weights[l];
            for i in 0..m {
                let row = &mut dw[i * k..i * k + k];
                let di = delta[i];
                for (g, &b) in row.iter_mut().zip(below) {
                    *g = di * b;
                }
            }
            grads.d_biases[l].copy_from_slice(&delta);

            if l > 0 {
                let mut prev = vec![0.0f32; k];
                for i in 0..m {
                    let row = &self.weights[l][i * k..i * k + k];
                    let di = delta[i];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * di;
                    }
                }
                // relu gradient: zero wherever the activation was clamped.
                for (p, &act) in prev.iter_mut().zip(below) {
                    if act <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Analytic gradients of `example_loss`, freshly allocated. This is the
    /// same computation the SGD step applies.
    pub fn example_gradients(
        &self,
        input: &[f32],
        target: &[f32],
    ) -> Result<PreferenceGradients, CoreError> {
        let mut grads = PreferenceGradients {
            loss: 0.0,
            d_weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        self.backprop_into(input, target, &mut grads)?;
        Ok(grads)
    }

    fn apply_gradients(&mut self, grads: &PreferenceGradients, lr: f32) {
        for l in 0..self.weights.len() {
            for (w, g) in self.weights[l].iter_mut().zip(&grads.d_weights[l]) {
                *w -= lr * g;
            }
            for (b, g) in self.biases[l].iter_mut().zip(&grads.d_biases[l]) {
                *b -= lr * g;
            }
        }
    }
}

/// Serving-path entry point: concatenate user and query features and run
/// the network.
pub fn predict_weights(
    net: &PreferenceNet,
    user_vector: &[f32],
    query_vector: &[f32],
) -> Result<Vec<f32>, CoreError> {
    let mut input = Vec::with_capacity(user_vector.len() + query_vector.len());
    input.extend_from_slice(user_vector);
    input.extend_from_slice(query_vector);
    net.forward(&input)
}

fn training_examples(
    users: &[UserRecord],
    logs: &[QueryLogEntry],
) -> Result<Vec<(Vec<f32>, Vec<f32>)>, CoreError> {
    let latent: std::collections::HashMap<u64, &Vec<f32>> = users
        .iter()
        .map(|u| (u.user_id, &u.latent_preference))
        .collect();
    logs.iter()
        .map(|log| {
            let target = latent
                .get(&log.user_id)
                .ok_or(CoreError::UnknownUser(log.user_id))?;
            let mut input = user_features(log.user_id);
            input.extend(query_features(&tokenize(&log.query_text)));
            Ok((input, (*target).clone()))
        })
        .collect()
}

/// Train a preference network from scratch. `hidden` lists the hidden layer
/// widths; input and output dimensions are fixed by the feature scheme and
/// [`PREFERENCE_DIM`].
pub fn train_preference(
    users: &[UserRecord],
    logs: &[QueryLogEntry],
    hidden: &[usize],
    hp: Hyperparams,
) -> Result<(PreferenceNet, TrainStats), CoreError> {
    let mut sizes = vec![INPUT_DIM];
    sizes.extend_from_slice(hidden);
    sizes.push(PREFERENCE_DIM);
    let mut net = PreferenceNet::new(&sizes, hp.seed)?;
    let stats = train_preference_warm(&mut net, users, logs, hp)?;
    Ok((net, stats))
}

/// Continue training an existing network in place (streaming warm starts).
pub fn train_preference_warm(
    net: &mut PreferenceNet,
    users: &[UserRecord],
    logs: &[QueryLogEntry],
    hp: Hyperparams,
) -> Result<TrainStats, CoreError> {
    if net.input_dim() != INPUT_DIM || net.output_dim() != PREFERENCE_DIM {
        return Err(CoreError::ShapeMismatch(format!(
            "network is {:?}, training expects input {INPUT_DIM} and output {PREFERENCE_DIM}",
            net.sizes()
        )));
    }
    let examples = training_examples(users, logs)?;
    let mut rng = ChaCha20Rng::seed_from_u64(hp.seed ^ 0x9e37_79b9);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grads = PreferenceGradients {
        loss: 0.0,
        d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
    };
    let mut stats = TrainStats::default();
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for &i in &order {
            let (input, target) = &examples[i];
            net.backprop_into(input, target, &mut grads)?;
            net.apply_gradients(&grads, hp.learning_rate);
            loss_sum += grads.loss;
        }
        stats
            .epoch_losses
            .push(loss_sum / examples.len().max(1) as f64);
    }
    Ok(stats)
}
