//! Sign-language clip classification: a from-scratch CNN stack, the
//! MobileNet-style classifier built on it, frame ingestion and temporal
//! resampling, and a PCA + linear SVM baseline.

pub mod dataset;
pub mod model;
pub mod nn;
pub mod pca_svm;
pub mod train;
pub mod video;
