//! Networked half of the benchmark: the four online service roles over
//! HTTP/JSON, the closed-loop load generator, and the training/publishing
//! schedulers.

pub mod error;
pub mod loadgen;
pub mod services;
pub mod state;
pub mod trainer;
pub mod wire;

pub use error::NetError;
