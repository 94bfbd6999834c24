//! Sequential layer stacks with recorded forward passes for training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, LayerSpec};
use super::ops::Mode;
use super::tensor::{Real, Tensor};
use super::weights::{ModelWeights, WeightsError};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer<T = f32> {
    pub name: String,
    pub layer: Layer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<NamedLayer<T>>,
    /// Leading layers whose parameters receive no gradient.
    frozen: usize,
}

/// Activations recorded by [`Network::forward_train`], consumed by backward.
#[derive(Debug, Clone, Default)]
pub struct Trace<T = f32> {
    inputs: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
    output: Option<Tensor<T>>,
}

impl<T> Trace<T> {
    pub fn is_empty(&self) -> bool {
        self.output.is_none()
    }
}

/// One gradient tensor per parameter, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// Euclidean norm over every parameter gradient.
    pub fn norm(&self) -> T {
        let sq = self
            .tensors
            .iter()
            .flat_map(|t| t.data())
            .fold(T::zero(), |acc, &v| acc + v * v);
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

impl<T: Real> Network<T> {
    /// Builds a stack from named specs, inferring every layer's input shape.
    pub fn build<R: Rng + ?Sized>(
        input_shape: &[usize],
        specs: &[(String, LayerSpec)],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (name, spec) in specs {
            if layers.iter().any(|l: &NamedLayer<T>| &l.name == name) {
                return Err(NnError::InvalidLayer(format!(
                    "duplicate layer name {name}"
                )));
            }
            let layer = Layer::init(spec, &shape, rng)?;
            shape = spec.output_shape(&shape)?;
            layers.push(NamedLayer {
                name: name.clone(),
                layer,
            });
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            frozen: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[NamedLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [NamedLayer<T>] {
        &mut self.layers
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| {
                l.layer.spec().output_shape(&s)
            })
    }

    /// Freezes the parameters of the first `n` layers.
    pub fn set_frozen_layers(&mut self, n: usize) {
        self.frozen = n.min(self.layers.len());
    }

    pub fn frozen_layers(&self) -> usize {
        self.frozen
    }

    /// `(qualified name, tensor)` for every parameter, e.g. `head.dense1.weight`.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.layer
                    .params()
                    .into_iter()
                    .map(move |(suffix, t)| (format!("{}.{suffix}", l.name), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.layer.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(NnError::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        // Infer mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.layers.iter().try_fold(x.clone(), |h, l| {
            l.layer.forward(&h, Mode::Infer, &mut rng).map(|(y, _)| y)
        })
    }

    /// Train-mode forward pass recording every layer input.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Trace<T>), NnError> {
        self.forward_recorded(x, Mode::Train, rng)
    }

    pub fn forward_recorded<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Trace<T>), NnError> {
        self.check_input(x)?;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
            output: None,
        };
        let mut h = x.clone();
        for l in &self.layers {
            let (y, mask) = l.layer.forward(&h, mode, rng)?;
            trace.inputs.push(std::mem::replace(&mut h, y));
            trace.masks.push(mask);
        }
        trace.output = Some(h.clone());
        Ok((h, trace))
    }

    /// Backpropagates a gradient with respect to the network output.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Gradients<T>, NnError> {
        self.backward_from(trace, grad_out, self.layers.len())
    }

    /// Backpropagates a gradient with respect to the logits feeding a final
    /// softmax layer, skipping that layer's Jacobian.
    pub fn backward_logits(
        &self,
        trace: &Trace<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Gradients<T>, NnError> {
        match self.layers.last() {
            Some(NamedLayer {
                layer: Layer::Softmax,
                ..
            }) => self.backward_from(trace, grad_logits, self.layers.len() - 1),
            _ => Err(NnError::InvalidLayer(
                "backward_logits needs a final softmax layer".into(),
            )),
        }
    }

    fn backward_from(
        &self,
        trace: &Trace<T>,
        grad: &Tensor<T>,
        top: usize,
    ) -> Result<Gradients<T>, NnError> {
        let Some(output) = trace.output.as_ref() else {
            return Err(NnError::NoForward);
        };
        if trace.inputs.len() != self.layers.len() {
            return Err(NnError::NoForward);
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = self
            .layers
            .iter()
            .map(|l| {
                l.layer
                    .params()
                    .iter()
                    .map(|(_, t)| Tensor::zeros(t.shape()))
                    .collect()
            })
            .collect();
        let mut g = grad.clone();
        for i in (self.frozen..top).rev() {
            let layer = &self.layers[i].layer;
            let layer_out = trace.inputs.get(i + 1).unwrap_or(output);
            let need_input = i > self.frozen;
            let (gx, pg) = layer.backward(
                &trace.inputs[i],
                layer_out,
                trace.masks[i].as_deref(),
                &g,
                need_input,
            )?;
            per_layer[i] = pg;
            match gx {
                Some(gx) => g = gx,
                None => break,
            }
        }
        Ok(Gradients {
            tensors: per_layer.into_iter().flatten().collect(),
        })
    }

    /// All-zero gradients shaped like the parameters.
    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self
                .params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn apply_sgd(&mut self, grads: &Gradients<T>, learning_rate: T) -> Result<(), NnError> {
        let mut params = self.params_mut();
        super::optim::sgd_step(&mut params, grads.tensors(), learning_rate)
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let cast_layer = |layer: &Layer<T>| -> Layer<U> {
            match layer {
                Layer::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => Layer::Conv2d {
                    kernel: kernel.cast(),
                    bias: bias.cast(),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::DepthwiseConv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => Layer::DepthwiseConv2d {
                    kernel: kernel.cast(),
                    bias: bias.cast(),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::PointwiseConv2d { kernel, bias } => Layer::PointwiseConv2d {
                    kernel: kernel.cast(),
                    bias: bias.cast(),
                },
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::Relu => Layer::Relu,
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
                Layer::Softmax => Layer::Softmax,
            }
        };
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| NamedLayer {
                    name: l.name.clone(),
                    layer: cast_layer(&l.layer),
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    /// Snapshot of all parameters as 32-bit records.
    pub fn to_weights(&self) -> Result<ModelWeights, WeightsError> {
        let mut w = ModelWeights::new();
        for (name, t) in self.params() {
            w.push(name, t.cast())?;
        }
        Ok(w)
    }

    /// Overwrites parameters from `weights`; names and shapes must match exactly.
    pub fn load_weights(&mut self, weights: &ModelWeights) -> Result<(), WeightsError> {
        let expected: Vec<(String, Vec<usize>)> = self
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if weights.records().len() != expected.len() {
            return Err(WeightsError::RecordCount {
                expected: expected.len(),
                found: weights.records().len(),
            });
        }
        for (name, shape) in &expected {
            let t = weights
                .get(name)
                .ok_or_else(|| WeightsError::MissingRecord(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(WeightsError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let values: Vec<Tensor<T>> = expected
            .iter()
            .map(|(name, _)| weights.get(name).expect("checked above").cast())
            .collect();
        for (dst, src) in self.params_mut().into_iter().zip(values) {
            *dst = src;
        }
        Ok(())
    }
}
