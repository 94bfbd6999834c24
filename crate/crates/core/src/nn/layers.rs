use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Mode, Padding};
use super::tensor::{Real, Tensor};
use super::NnError;

/// Kind and hyperparameters of one layer. Channel and unit counts of the
/// input side are inferred when a network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: Padding,
        filters: usize,
    },
    DepthwiseConv2d {
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    PointwiseConv2d {
        filters: usize,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidLayer(msg.to_string()));
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                filters,
                ..
            } if kernel == 0 || stride == 0 || filters == 0 => {
                bad("conv2d needs positive kernel, stride and filters")
            }
            LayerSpec::DepthwiseConv2d { kernel, stride, .. } if kernel == 0 || stride == 0 => {
                bad("depthwise_conv2d needs positive kernel and stride")
            }
            LayerSpec::PointwiseConv2d { filters: 0 } => bad("pointwise_conv2d needs filters"),
            LayerSpec::Dense { units: 0 } => bad("dense needs units"),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(NnError::InvalidDropout(rate))
            }
            _ => Ok(()),
        }
    }

    /// Number of trainable scalars given the input shape.
    pub fn param_count(&self, input_shape: &[usize]) -> usize {
        let channels = input_shape.last().copied().unwrap_or(0);
        match *self {
            LayerSpec::Conv2d {
                kernel, filters, ..
            } => kernel * kernel * channels * filters + filters,
            LayerSpec::DepthwiseConv2d { kernel, .. } => kernel * kernel * channels + channels,
            LayerSpec::PointwiseConv2d { filters } => channels * filters + filters,
            LayerSpec::Dense { units } => input_shape.iter().product::<usize>() * units + units,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let spatial = |what: &str| -> Result<(usize, usize, usize), NnError> {
            match input {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(NnError::Shape(format!(
                    "{what} needs an H x W x C input, got {input:?}"
                ))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                filters,
            } => {
                let (h, w, _) = spatial("conv2d")?;
                let g = ops::conv_geometry(h, w, kernel, kernel, stride, padding)?;
                Ok(vec![g.out_h, g.out_w, filters])
            }
            LayerSpec::DepthwiseConv2d {
                kernel,
                stride,
                padding,
            } => {
                let (h, w, c) = spatial("depthwise_conv2d")?;
                let g = ops::conv_geometry(h, w, kernel, kernel, stride, padding)?;
                Ok(vec![g.out_h, g.out_w, c])
            }
            LayerSpec::PointwiseConv2d { filters } => {
                let (h, w, _) = spatial("pointwise_conv2d")?;
                Ok(vec![h, w, filters])
            }
            LayerSpec::GlobalAvgPool => {
                let (_, _, c) = spatial("global_avg_pool")?;
                Ok(vec![1, 1, c])
            }
            LayerSpec::Dense { units } => Ok(vec![units]),
            LayerSpec::Softmax => {
                if input.iter().product::<usize>() < 2 {
                    return Err(NnError::TooFewClasses(input.iter().product()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }
}

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Conv2d {
        kernel: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: Padding,
    },
    DepthwiseConv2d {
        kernel: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: Padding,
    },
    PointwiseConv2d {
        kernel: Tensor<T>,
        bias: Tensor<T>,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

fn he_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::of_f64(rng.random_range(-limit..limit));
    }
    t
}

impl<T: Real> Layer<T> {
    /// Instantiates `spec` for `input_shape` with He-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(
        spec: &LayerSpec,
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        spec.validate()?;
        spec.output_shape(input_shape)?;
        let channels = input_shape.last().copied().unwrap_or(0);
        Ok(match *spec {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                filters,
            } => Layer::Conv2d {
                kernel: he_uniform(
                    &[kernel, kernel, channels, filters],
                    kernel * kernel * channels,
                    rng,
                ),
                bias: Tensor::zeros(&[filters]),
                stride,
                padding,
            },
            LayerSpec::DepthwiseConv2d {
                kernel,
                stride,
                padding,
            } => Layer::DepthwiseConv2d {
                kernel: he_uniform(&[kernel, kernel, channels], kernel * kernel, rng),
                bias: Tensor::zeros(&[channels]),
                stride,
                padding,
            },
            LayerSpec::PointwiseConv2d { filters } => Layer::PointwiseConv2d {
                kernel: he_uniform(&[channels, filters], channels, rng),
                bias: Tensor::zeros(&[filters]),
            },
            LayerSpec::Dense { units } => {
                let n = input_shape.iter().product();
                Layer::Dense {
                    weight: he_uniform(&[n, units], n, rng),
                    bias: Tensor::zeros(&[units]),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::Softmax => Layer::Softmax,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => LayerSpec::Conv2d {
                kernel: kernel.shape()[0],
                stride: *stride,
                padding: *padding,
                filters: kernel.shape()[3],
            },
            Layer::DepthwiseConv2d {
                kernel,
                stride,
                padding,
                ..
            } => LayerSpec::DepthwiseConv2d {
                kernel: kernel.shape()[0],
                stride: *stride,
                padding: *padding,
            },
            Layer::PointwiseConv2d { kernel, .. } => LayerSpec::PointwiseConv2d {
                filters: kernel.shape()[1],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Dense { weight, .. } => LayerSpec::Dense {
                units: weight.shape()[1],
            },
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    /// Parameter tensors with their suffixes, in serialization order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d { kernel, bias, .. }
            | Layer::DepthwiseConv2d { kernel, bias, .. }
            | Layer::PointwiseConv2d { kernel, bias } => vec![("kernel", kernel), ("bias", bias)],
            Layer::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d { kernel, bias, .. }
            | Layer::DepthwiseConv2d { kernel, bias, .. }
            | Layer::PointwiseConv2d { kernel, bias } => vec![kernel, bias],
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    /// Returns the output and, for train-mode dropout, the applied mask.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Option<Vec<T>>), NnError> {
        let y = match self {
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => ops::conv2d(x, kernel, Some(bias), *stride, *padding)?,
            Layer::DepthwiseConv2d {
                kernel,
                bias,
                stride,
                padding,
            } => ops::depthwise_conv2d(x, kernel, Some(bias), *stride, *padding)?,
            Layer::PointwiseConv2d { kernel, bias } => {
                ops::pointwise_conv2d(x, kernel, Some(bias))?
            }
            Layer::Relu => ops::relu(x),
            Layer::GlobalAvgPool => ops::global_average_pool(x)?,
            Layer::Dense { weight, bias } => ops::dense(x, weight, bias)?,
            Layer::Dropout { rate } => return ops::dropout(x, *rate, mode, rng),
            Layer::Softmax => {
                let p = ops::softmax(x.data())?;
                Tensor::new(x.shape().to_vec(), p)?
            }
        };
        Ok((y, None))
    }

    /// Propagates `grad_out` through the layer. Returns the input gradient
    /// (when requested) and parameter gradients aligned with [`Layer::params`].
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        mask: Option<&[T]>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>), NnError> {
        Ok(match self {
            Layer::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let (gx, gk, gb) = ops::conv2d_backward(
                    input,
                    kernel,
                    grad_out,
                    *stride,
                    *padding,
                    need_input_grad,
                )?;
                (gx, vec![gk, gb])
            }
            Layer::DepthwiseConv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let (gx, gk, gb) = ops::depthwise_conv2d_backward(
                    input,
                    kernel,
                    grad_out,
                    *stride,
                    *padding,
                    need_input_grad,
                )?;
                (gx, vec![gk, gb])
            }
            Layer::PointwiseConv2d { kernel, .. } => {
                let (gx, gk, gb) =
                    ops::pointwise_conv2d_backward(input, kernel, grad_out, need_input_grad)?;
                (gx, vec![gk, gb])
            }
            Layer::Dense { weight, .. } => {
                let (gx, gw, gb) = ops::dense_backward(input, weight, grad_out, need_input_grad)?;
                (gx, vec![gw, gb])
            }
            Layer::Relu => (Some(ops::relu_backward(input, grad_out)), Vec::new()),
            Layer::GlobalAvgPool => (
                Some(ops::global_average_pool_backward(input.shape(), grad_out)?),
                Vec::new(),
            ),
            Layer::Dropout { .. } => {
                let mut g = grad_out.clone();
                if let Some(mask) = mask {
                    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                (Some(g), Vec::new())
            }
            Layer::Softmax => {
                let g = ops::softmax_backward(output.data(), grad_out.data());
                (Some(Tensor::new(input.shape().to_vec(), g)?), Vec::new())
            }
        })
    }
}
