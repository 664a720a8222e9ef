//! Trainable encoders, the contrastive objective, the recreation
//! regulariser and finite-difference verification.

mod gradcheck;
mod loss;
mod model;

pub use gradcheck::{gradient_check, numeric_matrix_gradient, GradCheckReport, FD_STEP};
pub use loss::{contrastive_loss, foa_regularizer, LossBreakdown, ResidualForm};
pub use model::{Activation, Activations, ArchSpec, DenseLayer, EncoderModel, Gradients};

use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SslError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("model parameters are not finite")]
    NonFiniteParameters,
    #[error("gradient is not finite (training diverged)")]
    NonFiniteGradient,
    #[error("embedding row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
