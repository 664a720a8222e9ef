//! Dense linear algebra: matrices, Householder QR, Jacobi SVD and the
//! orthogonal Procrustes solver.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! any thread.

mod matrix;
mod procrustes;
mod qr;
mod svd;

pub use matrix::{dot, frobenius_distance, Matrix};
pub use procrustes::{procrustes_align, ProcrustesSolution};
pub use qr::{qr_decompose, QrFactors};
pub use svd::{thin_svd, Svd, MAX_SWEEPS, ROTATION_TOL};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} entries, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{0}: input contains NaN or infinity")]
    NonFiniteInput(&'static str),
    #[error("need rows >= cols, got {rows}x{cols}")]
    TooFewRows { rows: usize, cols: usize },
    #[error("{0}: matrix must be square")]
    NotSquare(&'static str),
}
