//! Federated self-supervised learning where clients share QR-extracted
//! feature-correlation matrices instead of model weights.
//!
//! Each client trains its own (possibly differently shaped) encoder with a
//! contrastive objective. After every round it publishes the mean R factor
//! of its projection batches; peers with a lower trace are pulled towards
//! features that can be rebuilt from that R through an optimal orthonormal
//! basis.

pub mod config;
pub mod correlation;
pub mod data;
pub mod eval;
pub mod export;
pub mod federation;
pub mod linalg;
pub mod ssl;

pub use correlation::{ClientId, CorrelationRecord};
pub use linalg::Matrix;
