//! In-path neural models and their serving kernels.
//!
//! Two models sit on the request path: a hashed bag-of-n-grams text
//! classifier that maps query text to category probabilities, and a small
//! multilayer perceptron that predicts per-user preference weights consumed
//! by the ranker. Both are trained here with plain SGD, serialize to a
//! versioned binary artifact, and run their forward passes through the
//! shared kernels in [`kernels`], which is also what the micro benchmark
//! times.

pub mod artifact;
pub mod classifier;
pub mod kernels;
pub mod preference;

pub use artifact::{
    deserialize as deserialize_artifact, serialize_classifier, serialize_preference, AnyModel,
    ModelArtifact, ModelKind,
};
pub use classifier::{featurize, train_classifier, ClassifierConfig, TextClassifierModel};
pub use kernels::{micro_bench, BenchShape, Kernel, MicroBenchStats};
pub use preference::{
    predict_weights, query_features, train_preference, user_features, PreferenceNet,
};

/// Per-epoch average training loss, returned alongside a trained model.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub epoch_losses: Vec<f64>,
}

/// Hyperparameters shared by both training loops.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 5,
            learning_rate: 0.5,
            seed: 1,
        }
    }
}
