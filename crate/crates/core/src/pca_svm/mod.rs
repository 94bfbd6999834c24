//! Baseline classifier: PCA over flattened, downsampled clips followed by a
//! one-vs-rest linear SVM.

pub mod linalg;
mod pca;
mod pipeline;
mod svm;

use thiserror::Error;

use crate::nn::WeightsError;
use crate::video::VideoError;

pub use linalg::Matrix;
pub use pca::{pca_fit, PcaModel};
pub use pipeline::{clip_features, PcaSvmConfig, PcaSvmPipeline};
pub use svm::{svm_train, SvmConfig, SvmModel, SvmReport};

#[derive(Debug, Error)]
pub enum PcaSvmError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("cannot keep {requested} components (at most {max})")]
    InvalidComponents { requested: usize, max: usize },
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{features} feature rows but {labels} labels")]
    LabelCount { features: usize, labels: usize },
    #[error("invalid SVM config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("pipeline metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
