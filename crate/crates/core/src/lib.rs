//! Session-based next-item recommendation in a shared item/session
//! embedding space.
//!
//! Sessions are encoded as convex combinations of their own item
//! embeddings (mean pooling or transformer-learned weights) and decoded with
//! temperature-scaled cosine similarity against dropout-perturbed candidate
//! embeddings. Baseline encoders and decoders are included for ablations.
//!
//! Layout:
//! - [`tensor`]: f64 tensors, reverse-mode tape, Adam, gradient checking.
//! - [`data`]: event ingestion, filtering, temporal splits, prefix examples, batching.
//! - [`model`]: configuration, parameters, encoders, decoders, checkpoints.
//! - [`train`]: training loop with early stopping, grid search, ablations.
//! - [`eval`]: ranking metrics, loss-rewrite verification, consistency probes,
//!   synthetic corpora.

mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
