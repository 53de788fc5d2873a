//! Minimal neural-network substrate: dense and 3-D convolutional layers
//! with hand-written reverse-mode gradients, Huber loss, decoupled-weight-
//! decay Adam, and a finite-difference gradient checker.
//!
//! Training runs in f32; gradient checking instantiates the same generic
//! layers in f64, where central differences are trustworthy.

pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use gradcheck::{check_stack, rel_err, GradCheckReport};
pub use layers::{BatchNorm3, Conv3, Dense, Layer, LayerCache, Mode, Stack};
pub use loss::huber_loss;
pub use optim::AdamW;
pub use tensor::{concat_cols, split_cols, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch{}: expected {expected}, got {actual}", fmt_layer(.layer))]
    ShapeMismatch {
        layer: Option<usize>,
        expected: String,
        actual: String,
    },
    #[error("non-finite gradient in tensor {tensor}; step rejected")]
    NonFiniteGradient { tensor: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

fn fmt_layer(layer: &Option<usize>) -> String {
    match layer {
        Some(i) => format!(" at layer {i}"),
        None => String::new(),
    }
}

impl NnError {
    pub fn shape(expected: String, actual: &[usize]) -> Self {
        NnError::ShapeMismatch {
            layer: None,
            expected,
            actual: format!("{actual:?}"),
        }
    }

    pub fn at_layer(self, idx: usize) -> Self {
        match self {
            NnError::ShapeMismatch {
                layer: None,
                expected,
                actual,
            } => NnError::ShapeMismatch {
                layer: Some(idx),
                expected,
                actual,
            },
            other => other,
        }
    }
}
