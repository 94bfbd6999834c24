//! The MobileNet-style clip classifier: a reduced depthwise-separable
//! backbone followed by average pooling, a 1000-unit ReLU layer, 75% dropout
//! and a softmax classifier.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::nn::{LayerSpec, ModelWeights, Network, NnError, Padding, Tensor, WeightsError};
use crate::video::{self, Clip, Frame, VideoError, CLIP_LEN};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset has {dataset} classes but the model has {model}")]
    ClassMismatch { dataset: usize, model: usize },
    #[error("expected {CLIP_LEN} frames, got {0}")]
    ClipLength(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    PcaSvm(#[from] crate::pca_svm::PcaSvmError),
    #[error("model metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub width_multiplier: f64,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            input_height: 96,
            input_width: 96,
            input_channels: 3,
            num_classes,
            width_multiplier: 0.25,
            hidden_units: 1000,
            dropout_rate: 0.75,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return err(format!(
                "width multiplier {} must be > 0",
                self.width_multiplier
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return err("input dimensions must be positive".into());
        }
        if self.hidden_units == 0 {
            return err("hidden width must be positive".into());
        }
        Ok(())
    }

    /// Channel widths of the stem and the three downsampling blocks.
    pub fn backbone_widths(&self) -> [usize; 4] {
        [32, 64, 128, 256].map(|c| ((c as f64 * self.width_multiplier).round() as usize).max(1))
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_height, self.input_width, self.input_channels]
    }

    /// Layer table, backbone first. The backbone is the first
    /// [`BACKBONE_LAYERS`] entries.
    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let [stem, w1, w2, w3] = self.backbone_widths();
        let mut specs = vec![
            (
                "stem.conv".to_string(),
                LayerSpec::Conv2d {
                    kernel: 3,
                    stride: 2,
                    padding: Padding::Same,
                    filters: stem,
                },
            ),
            ("stem.relu".to_string(), LayerSpec::Relu),
        ];
        for (i, width) in [w1, w2, w3].into_iter().enumerate() {
            let b = format!("block{}", i + 1);
            specs.push((
                format!("{b}.dw"),
                LayerSpec::DepthwiseConv2d {
                    kernel: 3,
                    stride: 2,
                    padding: Padding::Same,
                },
            ));
            specs.push((format!("{b}.dw_relu"), LayerSpec::Relu));
            specs.push((
                format!("{b}.pw"),
                LayerSpec::PointwiseConv2d { filters: width },
            ));
            specs.push((format!("{b}.pw_relu"), LayerSpec::Relu));
        }
        specs.extend([
            ("head.pool".to_string(), LayerSpec::GlobalAvgPool),
            (
                "head.dense".to_string(),
                LayerSpec::Dense {
                    units: self.hidden_units,
                },
            ),
            ("head.relu".to_string(), LayerSpec::Relu),
            (
                "head.dropout".to_string(),
                LayerSpec::Dropout {
                    rate: self.dropout_rate,
                },
            ),
            (
                "head.logits".to_string(),
                LayerSpec::Dense {
                    units: self.num_classes,
                },
            ),
            ("head.softmax".to_string(), LayerSpec::Softmax),
        ]);
        specs
    }
}

/// Number of leading layers forming the convolutional backbone.
pub const BACKBONE_LAYERS: usize = 14;

/// Class probabilities with the best labels first.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f32>,
    /// `(label, probability)` sorted by descending probability, ties by index.
    pub top_k: Vec<(usize, f32)>,
    pub label: usize,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f32>, k: usize) -> Self {
        let mut order: Vec<usize> = (0..probabilities.len()).collect();
        // Stable sort keeps lower indices first among equal probabilities.
        order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
        let top_k: Vec<(usize, f32)> = order
            .iter()
            .take(k.max(1))
            .map(|&i| (i, probabilities[i]))
            .collect();
        Self {
            label: top_k[0].0,
            top_k,
            probabilities,
        }
    }

    pub fn confidence(&self) -> f32 {
        self.probabilities[self.label]
    }
}

pub const DEFAULT_TOP_K: usize = 5;

/// Anything that assigns a class to a 12-frame clip.
pub trait ClipClassifier: Sync {
    fn num_classes(&self) -> usize;
    fn classify_clip(&self, clip: &Clip) -> Result<usize, ModelError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignModel {
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub net: Network<f32>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    labels: Vec<String>,
}

impl SignModel {
    /// Builds the network with seeded He initialisation.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Network::build(&config.input_shape(), &config.layer_specs(), &mut rng)?;
        let labels = (0..config.num_classes)
            .map(|i| format!("class{i}"))
            .collect();
        Ok(Self {
            config,
            labels,
            net,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, ModelError> {
        if labels.len() != self.config.num_classes {
            return Err(ModelError::ClassMismatch {
                dataset: labels.len(),
                model: self.config.num_classes,
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn label_word(&self, label: usize) -> &str {
        &self.labels[label]
    }

    /// Parameters are frozen for the backbone when `frozen` is true.
    pub fn freeze_backbone(&mut self, frozen: bool) {
        self.net
            .set_frozen_layers(if frozen { BACKBONE_LAYERS } else { 0 });
    }

    pub fn preprocess(&self, frame: &Frame) -> Result<Tensor<f32>, ModelError> {
        Ok(video::preprocess(
            frame,
            self.config.input_height,
            self.config.input_width,
        )?)
    }

    /// Inference on one preprocessed `H x W x 3` frame.
    pub fn predict_frame(&self, frame: &Tensor<f32>) -> Result<Prediction, ModelError> {
        let probs = self.net.forward(frame)?;
        Ok(Prediction::from_probabilities(
            probs.into_data(),
            DEFAULT_TOP_K,
        ))
    }

    /// Preprocesses then classifies a raw frame.
    pub fn predict_image(&self, frame: &Frame) -> Result<Prediction, ModelError> {
        self.predict_frame(&self.preprocess(frame)?)
    }

    /// Mean of the per-frame softmax vectors over exactly 12 preprocessed frames.
    pub fn predict_window(&self, frames: &[Tensor<f32>]) -> Result<Prediction, ModelError> {
        if frames.len() != CLIP_LEN {
            return Err(ModelError::ClipLength(frames.len()));
        }
        let mut mean = vec![0.0f32; self.config.num_classes];
        for f in frames {
            let p = self.net.forward(f)?;
            for (m, &v) in mean.iter_mut().zip(p.data()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= CLIP_LEN as f32;
        }
        Ok(Prediction::from_probabilities(mean, DEFAULT_TOP_K))
    }

    pub fn predict_clip(&self, clip: &Clip) -> Result<Prediction, ModelError> {
        let frames = clip
            .frames()
            .iter()
            .map(|f| self.preprocess(f))
            .collect::<Result<Vec<_>, _>>()?;
        self.predict_window(&frames)
    }

    fn meta_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    /// Writes the `SLW1` weights to `path` and config plus labels to
    /// `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        self.net.to_weights()?.save(path)?;
        let meta = ModelMeta {
            config: self.config.clone(),
            labels: self.labels.clone(),
        };
        std::fs::write(Self::meta_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let meta: ModelMeta = serde_json::from_slice(&std::fs::read(Self::meta_path(path))?)?;
        let weights = ModelWeights::load(path)?;
        let mut model = SignModel::build(meta.config)?.with_labels(meta.labels)?;
        model.net.load_weights(&weights)?;
        Ok(model)
    }
}

impl ClipClassifier for SignModel {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn classify_clip(&self, clip: &Clip) -> Result<usize, ModelError> {
        Ok(self.predict_clip(clip)?.label)
    }
}
