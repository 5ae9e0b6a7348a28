//! Gated autoencoders trained on transformed image pairs, with an optional
//! content-invariance regularizer that cross-reconstructs each pair using the
//! mapping code of a nearby pair in mapping space.
//!
//! Modules:
//! - [`model`]: parameters, forward passes, losses and analytic gradients
//! - [`cir`]: mapping-space nearest neighbors, partner sampling, λ/k schedule
//! - [`data`]: IDX ingestion, rotation pairs, contrast normalization, synthetic shapes
//! - [`train`]: denoising SGD loop, penalties, constraints, checkpoints
//! - [`eval`]: reconstruction metrics, Davies-Bouldin index, KNN rotation error, analogies

pub mod cir;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use error::{GaeError, Result};
