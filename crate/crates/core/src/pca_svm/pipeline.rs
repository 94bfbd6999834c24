use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::linalg::{dot, Matrix};
use super::pca::{pca_fit, PcaModel};
use super::svm::{svm_train, SvmConfig, SvmModel, SvmReport};
use super::PcaSvmError;
use crate::dataset::LabeledDataset;
use crate::model::{ClipClassifier, ModelError};
use crate::nn::{ModelWeights, Tensor, WeightsError};
use crate::video::{self, Clip, CLIP_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSvmConfig {
    /// Frames are resized to `frame_size x frame_size` before flattening.
    pub frame_size: usize,
    pub components: usize,
    pub svm: SvmConfig,
}

impl Default for PcaSvmConfig {
    fn default() -> Self {
        Self {
            frame_size: 32,
            components: 64,
            svm: SvmConfig::default(),
        }
    }
}

/// Flattens a clip into `12 * s * s * 3` values in `[-1, 1]`.
pub fn clip_features(clip: &Clip, frame_size: usize) -> Result<Vec<f64>, PcaSvmError> {
    let mut out = Vec::with_capacity(CLIP_LEN * frame_size * frame_size * 3);
    for f in clip.frames() {
        let t = video::preprocess(f, frame_size, frame_size)?;
        out.extend(t.data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSvmPipeline {
    pub frame_size: usize,
    pub pca: PcaModel,
    /// Uniform factor applied to projected features before the SVM.
    pub scale: f64,
    pub svm: SvmModel,
    pub vocabulary: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PipelineMeta {
    frame_size: usize,
    vocabulary: Vec<String>,
    c: f64,
}

fn to_f32_precision(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

impl PcaSvmPipeline {
    /// Fits PCA on the training clips, then the SVM on their projections.
    /// Parameters are rounded to `f32` so a saved and reloaded pipeline
    /// predicts identically.
    pub fn fit(
        dataset: &LabeledDataset,
        config: &PcaSvmConfig,
    ) -> Result<(Self, SvmReport), PcaSvmError> {
        config.svm.validate()?;
        let n = dataset.len();
        if n < 2 {
            return Err(PcaSvmError::TooFewSamples {
                needed: 2,
                found: n,
            });
        }
        let d = CLIP_LEN * config.frame_size * config.frame_size * 3;
        let mut data = Vec::with_capacity(n * d);
        for item in dataset.items() {
            data.extend(clip_features(&item.clip, config.frame_size)?);
        }
        let x = Matrix::new(n, d, data)?;
        let mut pca = pca_fit(&x, config.components)?;
        let k = pca.num_components();
        let mut comps = pca.components.data().to_vec();
        to_f32_precision(&mut comps);
        pca.components = Matrix::new(k, d, comps)?;
        to_f32_precision(&mut pca.mean);
        to_f32_precision(&mut pca.variances);

        let mut z = Vec::with_capacity(n * k);
        for i in 0..n {
            z.extend(pca.transform(x.row(i))?);
        }
        let mean_sq = z.chunks(k).map(|r| dot(r, r)).sum::<f64>() / n as f64;
        let scale = if mean_sq > 0.0 {
            (1.0 / mean_sq.sqrt()) as f32 as f64
        } else {
            1.0
        };
        z.iter_mut().for_each(|v| *v *= scale);
        let labels: Vec<usize> = dataset.items().iter().map(|i| i.label).collect();
        let (mut svm, report) = svm_train(&Matrix::new(n, k, z)?, &labels, &config.svm)?;
        let classes = svm.num_classes();
        let mut w = svm.weights.data().to_vec();
        to_f32_precision(&mut w);
        svm.weights = Matrix::new(classes, k, w)?;
        to_f32_precision(&mut svm.biases);
        // Classes above the highest training label never win.
        let total = dataset.num_classes();
        if classes < total {
            let mut w = svm.weights.data().to_vec();
            w.resize(total * k, 0.0);
            svm.weights = Matrix::new(total, k, w)?;
            svm.biases.resize(total, f32::MIN as f64);
        }
        Ok((
            Self {
                frame_size: config.frame_size,
                pca,
                scale,
                svm,
                vocabulary: dataset.vocabulary().to_vec(),
            },
            report,
        ))
    }

    pub fn project(&self, clip: &Clip) -> Result<Vec<f64>, PcaSvmError> {
        let mut z = self.pca.transform(&clip_features(clip, self.frame_size)?)?;
        z.iter_mut().for_each(|v| *v *= self.scale);
        Ok(z)
    }

    pub fn predict(&self, clip: &Clip) -> Result<usize, PcaSvmError> {
        self.svm.predict(&self.project(clip)?)
    }

    pub fn decision_values(&self, clip: &Clip) -> Result<Vec<f64>, PcaSvmError> {
        self.svm.decision_values(&self.project(clip)?)
    }

    fn meta_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    fn to_weights(&self) -> Result<ModelWeights, PcaSvmError> {
        let t = |shape: Vec<usize>, v: &[f64]| {
            Tensor::new(shape, v.iter().map(|&x| x as f32).collect())
                .expect("shape matches data length")
        };
        let (k, d) = (self.pca.num_components(), self.pca.input_dim());
        let classes = self.svm.num_classes();
        let mut w = ModelWeights::new();
        w.push("pca.mean", t(vec![d], &self.pca.mean))?;
        w.push("pca.components", t(vec![k, d], self.pca.components.data()))?;
        w.push("pca.variances", t(vec![k], &self.pca.variances))?;
        w.push("svm.weights", t(vec![classes, k], self.svm.weights.data()))?;
        w.push("svm.bias", t(vec![classes], &self.svm.biases))?;
        w.push("svm.scale", t(vec![1], &[self.scale]))?;
        Ok(w)
    }

    /// Writes `SLW1` parameters to `path` and vocabulary plus frame size to
    /// `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PcaSvmError> {
        let path = path.as_ref();
        self.to_weights()?.save(path)?;
        let meta = PipelineMeta {
            frame_size: self.frame_size,
            vocabulary: self.vocabulary.clone(),
            c: self.svm.c,
        };
        std::fs::write(Self::meta_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PcaSvmError> {
        let path = path.as_ref();
        let meta: PipelineMeta = serde_json::from_slice(&std::fs::read(Self::meta_path(path))?)?;
        let w = ModelWeights::load(path)?;
        let get = |name: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>), PcaSvmError> {
            let t = w
                .get(name)
                .ok_or_else(|| WeightsError::MissingRecord(name.to_string()))?;
            if t.rank() != rank {
                return Err(WeightsError::ShapeMismatch {
                    name: name.to_string(),
                    expected: vec![0; rank],
                    found: t.shape().to_vec(),
                }
                .into());
            }
            Ok((
                t.shape().to_vec(),
                t.data().iter().map(|&v| v as f64).collect(),
            ))
        };
        let (_, mean) = get("pca.mean", 1)?;
        let (cs, comps) = get("pca.components", 2)?;
        let (_, variances) = get("pca.variances", 1)?;
        let (ws, weights) = get("svm.weights", 2)?;
        let (_, biases) = get("svm.bias", 1)?;
        let (_, scale) = get("svm.scale", 1)?;
        let d = CLIP_LEN * meta.frame_size * meta.frame_size * 3;
        let expect = |what: usize, found: usize| {
            if what == found {
                Ok(())
            } else {
                Err(PcaSvmError::DimensionMismatch {
                    expected: what,
                    found,
                })
            }
        };
        expect(d, mean.len())?;
        expect(d, cs[1])?;
        expect(cs[0], variances.len())?;
        expect(cs[0], ws[1])?;
        expect(ws[0], biases.len())?;
        expect(ws[0], meta.vocabulary.len())?;
        expect(1, scale.len())?;
        Ok(Self {
            frame_size: meta.frame_size,
            pca: PcaModel {
                mean,
                components: Matrix::new(cs[0], cs[1], comps)?,
                variances,
            },
            scale: scale[0],
            svm: SvmModel {
                weights: Matrix::new(ws[0], ws[1], weights)?,
                biases,
                c: meta.c,
            },
            vocabulary: meta.vocabulary,
        })
    }
}

impl ClipClassifier for PcaSvmPipeline {
    fn num_classes(&self) -> usize {
        self.svm.num_classes()
    }

    fn classify_clip(&self, clip: &Clip) -> Result<usize, ModelError> {
        Ok(self.predict(clip)?)
    }
}
