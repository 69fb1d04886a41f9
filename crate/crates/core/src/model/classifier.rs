//! Hashed bag-of-n-grams text classifier.
//!
//! Query text is tokenized, unigrams and n-grams are hashed into a fixed
//! bucket space, bucket embeddings are averaged, and a single linear layer
//! plus softmax produces category probabilities. Training is plain SGD on
//! cross-entropy. The bucket hash is FNV-1a with no per-run seed, so a model
//! trained anywhere classifies identically everywhere.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::datagen::QueryLogEntry;
use crate::error::CoreError;
use crate::hash::{fnv1a64, fnv1a64_continue};
use crate::index::tokenize;
use crate::model::kernels::softmax_rows;
use crate::model::{Hyperparams, TrainStats};

/// Separator byte hashed between the tokens of an n-gram so that
/// ("ab", "c") and ("a", "bc") land in different buckets.
const NGRAM_SEP: &[u8] = &[0x1f];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierConfig {
    /// Hash bucket count for token and n-gram features.
    pub bucket_count: usize,
    pub embedding_dim: usize,
    pub category_count: usize,
    /// Maximum n-gram order; 2 means unigrams plus bigrams.
    pub ngram_order: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            bucket_count: 1 << 18,
            embedding_dim: 16,
            category_count: 10,
            ngram_order: 2,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        let positive = [
            ("bucket_count", self.bucket_count),
            ("embedding_dim", self.embedding_dim),
            ("category_count", self.category_count),
            ("ngram_order", self.ngram_order),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(CoreError::InvalidConfig {
                    field,
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

/// Hash the unigrams and n-grams (up to `ngram_order`) of `text` into
/// `[0, bucket_count)`. Repeated features keep their multiplicity.
pub fn featurize(text: &str, bucket_count: usize, ngram_order: usize) -> Vec<u32> {
    let tokens = tokenize(text);
    let mut buckets = Vec::new();
    for window in 1..=ngram_order.max(1) {
        if window > tokens.len() {
            break;
        }
        for gram in tokens.windows(window) {
            let mut h = fnv1a64(gram[0].as_bytes());
            for tok in &gram[1..] {
                h = fnv1a64_continue(h, NGRAM_SEP);
                h = fnv1a64_continue(h, tok.as_bytes());
            }
            buckets.push((h % bucket_count as u64) as u32);
        }
    }
    buckets
}

/// Analytic gradients of one example's cross-entropy loss, as produced by
/// the training step and consumed by the finite-difference checks.
#[derive(Debug, Clone)]
pub struct ClassifierGradients {
    pub loss: f64,
    /// Dense gradient of the output layer, `embedding_dim * category_count`.
    pub d_output: Vec<f32>,
    /// Sparse embedding gradient: one row per distinct feature bucket.
    pub d_embedding: Vec<(u32, Vec<f32>)>,
}

/// The trained classifier: a bucket embedding table (`bucket_count` rows of
/// `embedding_dim`) and a linear output layer (`embedding_dim` rows of
/// `category_count`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifierModel {
    pub config: ClassifierConfig,
    embedding: Vec<f32>,
    output: Vec<f32>,
}

impl TextClassifierModel {
    /// Seeded initialization: embeddings uniform in ±1/embedding_dim, output
    /// layer zero. A zero output layer classifies everything as uniform,
    /// which is the documented zero-epoch behavior.
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self, CoreError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bound = 1.0 / config.embedding_dim as f32;
        let embedding = (0..config.bucket_count * config.embedding_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let output = vec![0.0; config.embedding_dim * config.category_count];
        Ok(TextClassifierModel {
            config,
            embedding,
            output,
        })
    }

    pub fn from_parameters(
        config: ClassifierConfig,
        embedding: Vec<f32>,
        output: Vec<f32>,
    ) -> Result<Self, CoreError> {
        config.validate()?;
        if embedding.len() != config.bucket_count * config.embedding_dim {
            return Err(CoreError::ShapeMismatch(format!(
                "embedding has {} values, config wants {}",
                embedding.len(),
                config.bucket_count * config.embedding_dim
            )));
        }
        if output.len() != config.embedding_dim * config.category_count {
            return Err(CoreError::ShapeMismatch(format!(
                "output layer has {} values, config wants {}",
                output.len(),
                config.embedding_dim * config.category_count
            )));
        }
        Ok(TextClassifierModel {
            config,
            embedding,
            output,
        })
    }

    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }

    pub fn output(&self) -> &[f32] {
        &self.output
    }

    pub fn embedding_mut(&mut self) -> &mut [f32] {
        &mut self.embedding
    }

    pub fn output_mut(&mut self) -> &mut [f32] {
        &mut self.output
    }

    /// Mean embedding of a feature multiset; `None` when there are no
    /// features.
    fn pooled(&self, buckets: &[u32]) -> Option<Vec<f32>> {
        if buckets.is_empty() {
            return None;
        }
        let d = self.config.embedding_dim;
        let mut h = vec![0.0f32; d];
        for &b in buckets {
            let row = &self.embedding[b as usize * d..b as usize * d + d];
            for (hi, &ri) in h.iter_mut().zip(row) {
                *hi += ri;
            }
        }
        let inv = 1.0 / buckets.len() as f32;
        for hi in h.iter_mut() {
            *hi *= inv;
        }
        Some(h)
    }

    fn logits(&self, buckets: &[u32]) -> Vec<f32> {
        let c = self.config.category_count;
        match self.pooled(buckets) {
            None => vec![0.0; c],
            Some(h) => {
                let mut logits = vec![0.0f32; c];
                super::kernels::dense(&h, &self.output, 1, self.config.embedding_dim, c, &mut logits);
                logits
            }
        }
    }

    /// Category probability distribution for a query. Empty or
    /// whitespace-only input yields the uniform distribution.
    pub fn classify(&self, text: &str) -> Vec<f32> {
        let buckets = featurize(text, self.config.bucket_count, self.config.ngram_order);
        let mut probs = self.logits(&buckets);
        softmax_rows(&mut probs, 1, self.config.category_count);
        probs
    }

    /// Cross-entropy loss of one example, evaluated entirely in f64 so
    /// finite-difference probes are not drowned by f32 rounding.
    pub fn example_loss(&self, buckets: &[u32], label: u32) -> f64 {
        let d = self.config.embedding_dim;
        let c = self.config.category_count;
        if buckets.is_empty() {
            return (c as f64).ln();
        }
        let mut h = vec![0.0f64; d];
        for &b in buckets {
            let row = &self.embedding[b as usize * d..b as usize * d + d];
            for (hi, &ri) in h.iter_mut().zip(row) {
                *hi += ri as f64;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        let mut logits = vec![0.0f64; c];
        for j in 0..c {
            let mut acc = 0.0f64;
            for i in 0..d {
                acc += h[i] * inv * self.output[i * c + j] as f64;
            }
            logits[j] = acc;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
        log_z - logits[label as usize]
    }

    /// Analytic gradients of `example_loss` at the current parameters. This
    /// is the exact computation the SGD step applies.
    pub fn example_gradients(&self, buckets: &[u32], label: u32) -> ClassifierGradients {
        let d = self.config.embedding_dim;
        let c = self.config.category_count;
        if buckets.is_empty() {
            return ClassifierGradients {
                loss: (c as f64).ln(),
                d_output: vec![0.0; d * c],
                d_embedding: Vec::new(),
            };
        }
        let h = self.pooled(buckets).expect("non-empty buckets");
        let mut probs = vec![0.0f32; c];
        super::kernels::dense(&h, &self.output, 1, d, c, &mut probs);
        softmax_rows(&mut probs, 1, c);
        let loss = -(probs[label as usize].max(1e-12) as f64).ln();

        // dL/dlogit = p - onehot(label)
        let mut dlogits = probs;
        dlogits[label as usize] -= 1.0;

        let mut d_output = vec![0.0f32; d * c];
        let mut dh = vec![0.0f32; d];
        for i in 0..d {
            let row = &self.output[i * c..i * c + c];
            let mut acc = 0.0f32;
            for j in 0..c {
                d_output[i * c + j] = h[i] * dlogits[j];
                acc += row[j] * dlogits[j];
            }
            dh[i] = acc;
        }

        // Each bucket row receives dh scaled by multiplicity / feature count.
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for &b in buckets {
            match counts.iter_mut().find(|(bb, _)| *bb == b) {
                Some((_, n)) => *n += 1,
                None => counts.push((b, 1)),
            }
        }
        let inv = 1.0 / buckets.len() as f32;
        let d_embedding = counts
            .into_iter()
            .map(|(b, mult)| {
                let scale = mult as f32 * inv;
                (b, dh.iter().map(|&g| g * scale).collect())
            })
            .collect();

        ClassifierGradients {
            loss,
            d_output,
            d_embedding,
        }
    }

    /// One SGD step on one example; returns the pre-update loss.
    fn sgd_step(&mut self, buckets: &[u32], label: u32, lr: f32) -> f64 {
        let grads = self.example_gradients(buckets, label);
        for (w, g) in self.output.iter_mut().zip(&grads.d_output) {
            *w -= lr * g;
        }
        let d = self.config.embedding_dim;
        for (bucket, row_grad) in &grads.d_embedding {
            let row = &mut self.embedding[*bucket as usize * d..*bucket as usize * d + d];
            for (w, g) in row.iter_mut().zip(row_grad) {
                *w -= lr * g;
            }
        }
        grads.loss
    }
}

/// Train a classifier from scratch on query logs. Labels are the logs'
/// clicked categories. Single-threaded; identical seeds and hyperparameters
/// give bit-identical parameters.
pub fn train_classifier(
    logs: &[QueryLogEntry],
    config: ClassifierConfig,
    hp: Hyperparams,
) -> Result<(TextClassifierModel, TrainStats), CoreError> {
    let mut model = TextClassifierModel::new(config, hp.seed)?;
    let stats = train_classifier_warm(&mut model, logs, hp)?;
    Ok((model, stats))
}

/// Continue training an existing classifier in place (used by the streaming
/// schedule to warm-start from the previous tick's parameters).
pub fn train_classifier_warm(
    model: &mut TextClassifierModel,
    logs: &[QueryLogEntry],
    hp: Hyperparams,
) -> Result<TrainStats, CoreError> {
    for log in logs {
        if log.clicked_category_id as usize >= model.config.category_count {
            return Err(CoreError::InvalidConfig {
                field: "category_count",
                reason: format!(
                    "log entry references category {} but model has {}",
                    log.clicked_category_id, model.config.category_count
                ),
            });
        }
    }
    let examples: Vec<(Vec<u32>, u32)> = logs
        .iter()
        .map(|l| {
            (
                featurize(&l.query_text, model.config.bucket_count, model.config.ngram_order),
                l.clicked_category_id,
            )
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(hp.seed ^ 0x5eed_c1a5);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut stats = TrainStats::default();
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for &i in &order {
            let (buckets, label) = &examples[i];
            loss_sum += model.sgd_step(buckets, *label, hp.learning_rate);
        }
        stats
            .epoch_losses
            .push(loss_sum / examples.len().max(1) as f64);
    }
    Ok(stats)
}
