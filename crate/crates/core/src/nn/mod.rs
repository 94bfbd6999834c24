//! Minimal CNN building blocks: tensors, layer kernels with hand-written
//! gradients, sequential networks, SGD and weight persistence.

pub mod layers;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod weights;

use thiserror::Error;

pub use layers::{Layer, LayerSpec};
pub use network::{Gradients, NamedLayer, Network, Trace};
pub use ops::{Logits, Mode, Padding};
pub use tensor::{Real, Tensor};
pub use weights::{ModelWeights, WeightsError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropout(f64),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a recorded forward pass")]
    NoForward,
}
