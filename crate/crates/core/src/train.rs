//! Mini-batch SGD on frame-level cross-entropy, and clip-level evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::model::{ClipClassifier, ModelError, SignModel};
use crate::nn::ops::cross_entropy;
use crate::nn::Tensor;
use crate::video::CLIP_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Frames drawn per clip each epoch; all 12 when `None`.
    pub frames_per_clip: Option<usize>,
    pub freeze_backbone: bool,
    /// Batch gradients whose norm exceeds this are rescaled down to it.
    pub clip_norm: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            frames_per_clip: None,
            freeze_backbone: false,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean frame cross-entropy over the epoch.
    pub loss: f64,
    /// Frame-level accuracy of the train-mode (dropout) forward passes.
    pub train_accuracy: f64,
    /// Clip-level validation accuracy after the epoch.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

fn check_dataset(model: &SignModel, data: &LabeledDataset) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let classes = model.config.num_classes;
    if let Some(bad) = data.items().iter().find(|i| i.label >= classes) {
        return Err(ModelError::LabelOutOfRange {
            label: bad.label,
            classes,
        });
    }
    Ok(())
}

/// Trains `model` in place. Shuffling, frame selection and dropout all draw
/// from one generator seeded with `cfg.seed`, so runs are reproducible.
pub fn train(
    model: &mut SignModel,
    train_set: &LabeledDataset,
    val_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    check_dataset(model, train_set)?;
    if let Some(v) = val_set {
        check_dataset(model, v)?;
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidConfig(
            "batch size must be positive".into(),
        ));
    }
    model.freeze_backbone(cfg.freeze_backbone);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_clip = cfg.frames_per_clip.unwrap_or(CLIP_LEN).clamp(1, CLIP_LEN);
    let lr = cfg.learning_rate;
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut samples: Vec<(usize, usize)> = Vec::new();
        let mut frame_ids: Vec<usize> = (0..CLIP_LEN).collect();
        for clip in 0..train_set.len() {
            frame_ids.shuffle(&mut rng);
            samples.extend(frame_ids[..per_clip].iter().map(|&f| (clip, f)));
        }
        samples.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in samples.chunks(cfg.batch_size) {
            let mut grads = model.net.zero_gradients();
            for &(clip, frame) in batch {
                let item = &train_set.items()[clip];
                let x = model.preprocess(&item.clip.frames()[frame])?;
                let (probs, trace) = model.net.forward_train(&x, &mut rng)?;
                let (loss, grad_logits) = cross_entropy(probs.data(), item.label)?;
                loss_sum += loss as f64;
                if argmax(probs.data()) == item.label {
                    correct += 1;
                }
                let g = model
                    .net
                    .backward_logits(&trace, &Tensor::from_slice(&grad_logits))?;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f32);
            if let Some(max) = cfg.clip_norm {
                let norm = grads.norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            model.net.apply_sgd(&grads, lr)?;
        }

        let val_accuracy = match val_set {
            Some(v) => Some(evaluate(model, v)?.accuracy),
            None => None,
        };
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
            val_accuracy,
        });
    }
    Ok(report)
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the dataset.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Clip-level accuracy and confusion matrix. Clips are classified on
/// parallel scoped threads; the classifier is only read.
pub fn evaluate<C: ClipClassifier>(
    classifier: &C,
    dataset: &LabeledDataset,
) -> Result<EvalReport, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let k = classifier.num_classes();
    if let Some(bad) = dataset.items().iter().find(|i| i.label >= k) {
        return Err(ModelError::LabelOutOfRange {
            label: bad.label,
            classes: k,
        });
    }
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(dataset.len());
    let chunk = dataset.len().div_ceil(threads);
    let predicted: Vec<usize> = std::thread::scope(|s| {
        let handles: Vec<_> = dataset
            .items()
            .chunks(chunk)
            .map(|items| {
                s.spawn(move || {
                    items
                        .iter()
                        .map(|i| classifier.classify_clip(&i.clip))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<Vec<usize>>, _>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    let mut confusion = vec![vec![0usize; k]; k];
    for (item, &p) in dataset.items().iter().zip(&predicted) {
        confusion[item.label][p.min(k - 1)] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / dataset.len() as f64,
        per_class_accuracy,
        confusion,
    })
}
