//! Core engine for esbench: seed-driven synthetic e-commerce data, tiered
//! search indexes, the two in-path neural models, and latency aggregation.
//!
//! Everything in this crate is deterministic under a fixed seed and free of
//! I/O beyond explicit file helpers, so the serving and load-generation
//! layers can be exercised against independently computed oracles.

pub mod datagen;
pub mod error;
pub mod hash;
pub mod index;
pub mod metrics;
pub mod model;

pub use error::CoreError;

/// Length of both the per-user latent preference vector and the per-product
/// rank feature vector. The ranker's dot-product scoring relies on the two
/// sides agreeing on this dimension.
pub const PREFERENCE_DIM: usize = 10;
