//! Forward and backward kernels for the layer set.
//!
//! Activations are laid out `H x W x C` (channels innermost). Convolution
//! kernels are `kh x kw x C x F`, depthwise kernels `kh x kw x C`, pointwise
//! kernels `C x F` and dense weights `n x m` (input index selects the row).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Output extent and leading padding of a strided 2-D window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize), NnError> {
    if stride == 0 || kernel == 0 {
        return Err(NnError::Shape("stride and kernel must be positive".into()));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(NnError::Shape(format!(
                    "kernel extent {kernel} exceeds input extent {input} under valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let pad_total = needed.saturating_sub(input);
            Ok((out, pad_total / 2))
        }
    }
}

pub fn conv_geometry(
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry, NnError> {
    let (out_h, pad_top) = axis_geometry(in_h, kh, stride, padding)?;
    let (out_w, pad_left) = axis_geometry(in_w, kw, stride, padding)?;
    Ok(ConvGeometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

#[inline]
fn source_index(out: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (out * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

fn hwc(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize), NnError> {
    t.expect_rank(3, what)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2]))
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, n: usize, what: &str) -> Result<(), NnError> {
    match bias {
        Some(b) if b.len() != n => Err(NnError::Shape(format!(
            "{what}: bias has {} entries, expected {n}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

/// Raw classifier scores, at least two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T = f32>(Vec<T>);

impl<T: Real> Logits<T> {
    pub fn new(values: Vec<T>) -> Result<Self, NnError> {
        if values.len() < 2 {
            return Err(NnError::TooFewClasses(values.len()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn softmax(&self) -> Vec<T> {
        softmax_unchecked(&self.0)
    }
}

/// Max-shifted softmax over a score vector of length >= 2.
pub fn softmax<T: Real>(z: &[T]) -> Result<Vec<T>, NnError> {
    if z.len() < 2 {
        return Err(NnError::TooFewClasses(z.len()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("softmax input"));
    }
    Ok(softmax_unchecked(z))
}

fn softmax_unchecked<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().copied().fold(T::zero(), |a, b| a + b);
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward<T: Real>(probs: &[T], grad_out: &[T]) -> Vec<T> {
    let dot = probs
        .iter()
        .zip(grad_out)
        .fold(T::zero(), |acc, (&p, &g)| acc + p * g);
    probs
        .iter()
        .zip(grad_out)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}

/// Negative log-likelihood of `true_class` and its gradient with respect to
/// the logits that produced `probs` (`probs - one_hot`).
pub fn cross_entropy<T: Real>(probs: &[T], true_class: usize) -> Result<(T, Vec<T>), NnError> {
    if true_class >= probs.len() {
        return Err(NnError::ClassOutOfRange {
            class: true_class,
            classes: probs.len(),
        });
    }
    let p = probs[true_class].max(T::min_positive_value());
    let loss = -p.ln();
    let mut grad = probs.to_vec();
    grad[true_class] -= T::one();
    Ok((loss, grad))
}

/// Cross-correlation of an `H x W x C` input with a `kh x kw x C x F` kernel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (h, w, c) = hwc(input, "conv2d input")?;
    kernel.expect_rank(4, "conv2d kernel")?;
    let ks = kernel.shape();
    let (kh, kw, kc, f) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c {
        return Err(NnError::Shape(format!(
            "conv2d: kernel expects {kc} input channels, input has {c}"
        )));
    }
    check_bias(bias, f, "conv2d")?;
    let g = conv_geometry(h, w, kh, kw, stride, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); g.out_h * g.out_w * f];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let acc = &mut out[(oy * g.out_w + ox) * f..][..f];
            if let Some(b) = bias {
                acc.copy_from_slice(b.data());
            }
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, stride, g.pad_top, h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, stride, g.pad_left, w) else {
                        continue;
                    };
                    let xin = &x[(iy * w + ix) * c..][..c];
                    let kbase = (ky * kw + kx) * c * f;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let krow = &k[kbase + ci * f..][..f];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, f], out)
}

/// Gradients of a convolution: `(input, kernel, bias)`. The input gradient is
/// skipped (returned as `None`) when `need_input_grad` is false.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let (h, w, c) = hwc(input, "conv2d input")?;
    let ks = kernel.shape();
    let (kh, kw, f) = (ks[0], ks[1], ks[3]);
    let geo = conv_geometry(h, w, kh, kw, stride, padding)?;
    if grad_out.shape() != [geo.out_h, geo.out_w, f] {
        return Err(NnError::Shape(format!(
            "conv2d backward: gradient shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); f];
    let mut gx = need_input_grad.then(|| vec![T::zero(); x.len()]);
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let gout = &g[(oy * geo.out_w + ox) * f..][..f];
            for (b, &gv) in gb.iter_mut().zip(gout) {
                *b += gv;
            }
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, stride, geo.pad_top, h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, stride, geo.pad_left, w) else {
                        continue;
                    };
                    let xoff = (iy * w + ix) * c;
                    let kbase = (ky * kw + kx) * c * f;
                    for ci in 0..c {
                        let xv = x[xoff + ci];
                        let kslice = kbase + ci * f;
                        if xv != T::zero() {
                            for (gkv, &gv) in gk[kslice..kslice + f].iter_mut().zip(gout) {
                                *gkv += xv * gv;
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let mut s = T::zero();
                            for (&kv, &gv) in k[kslice..kslice + f].iter().zip(gout) {
                                s += kv * gv;
                            }
                            gx[xoff + ci] += s;
                        }
                    }
                }
            }
        }
    }
    let gx = gx
        .map(|d| Tensor::new(input.shape().to_vec(), d))
        .transpose()?;
    Ok((
        gx,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![f], gb)?,
    ))
}

/// Channel-wise spatial convolution with a `kh x kw x C` kernel.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (h, w, c) = hwc(input, "depthwise input")?;
    kernel.expect_rank(3, "depthwise kernel")?;
    let ks = kernel.shape();
    let (kh, kw, kc) = (ks[0], ks[1], ks[2]);
    if kc != c {
        return Err(NnError::Shape(format!(
            "depthwise: kernel has {kc} channels, input has {c}"
        )));
    }
    check_bias(bias, c, "depthwise")?;
    let g = conv_geometry(h, w, kh, kw, stride, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); g.out_h * g.out_w * c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let acc = &mut out[(oy * g.out_w + ox) * c..][..c];
            if let Some(b) = bias {
                acc.copy_from_slice(b.data());
            }
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, stride, g.pad_top, h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, stride, g.pad_left, w) else {
                        continue;
                    };
                    let xin = &x[(iy * w + ix) * c..][..c];
                    let krow = &k[(ky * kw + kx) * c..][..c];
                    for ((a, &xv), &kv) in acc.iter_mut().zip(xin).zip(krow) {
                        *a += xv * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, c], out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let (h, w, c) = hwc(input, "depthwise input")?;
    let ks = kernel.shape();
    let (kh, kw) = (ks[0], ks[1]);
    let geo = conv_geometry(h, w, kh, kw, stride, padding)?;
    if grad_out.shape() != [geo.out_h, geo.out_w, c] {
        return Err(NnError::Shape(format!(
            "depthwise backward: gradient shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); c];
    let mut gx = need_input_grad.then(|| vec![T::zero(); x.len()]);
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let gout = &g[(oy * geo.out_w + ox) * c..][..c];
            for (b, &gv) in gb.iter_mut().zip(gout) {
                *b += gv;
            }
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, stride, geo.pad_top, h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, stride, geo.pad_left, w) else {
                        continue;
                    };
                    let xoff = (iy * w + ix) * c;
                    let koff = (ky * kw + kx) * c;
                    for ch in 0..c {
                        gk[koff + ch] += x[xoff + ch] * gout[ch];
                    }
                    if let Some(gx) = gx.as_mut() {
                        for ch in 0..c {
                            gx[xoff + ch] += k[koff + ch] * gout[ch];
                        }
                    }
                }
            }
        }
    }
    let gx = gx
        .map(|d| Tensor::new(input.shape().to_vec(), d))
        .transpose()?;
    Ok((
        gx,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![c], gb)?,
    ))
}

/// 1x1 convolution with a `C x F` kernel (per-pixel channel mixing).
pub fn pointwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    let (h, w, c) = hwc(input, "pointwise input")?;
    kernel.expect_rank(2, "pointwise kernel")?;
    let (kc, f) = (kernel.shape()[0], kernel.shape()[1]);
    if kc != c {
        return Err(NnError::Shape(format!(
            "pointwise: kernel expects {kc} channels, input has {c}"
        )));
    }
    check_bias(bias, f, "pointwise")?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); h * w * f];
    for (xin, acc) in x.chunks_exact(c).zip(out.chunks_exact_mut(f)) {
        if let Some(b) = bias {
            acc.copy_from_slice(b.data());
        }
        for (ci, &xv) in xin.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (a, &kv) in acc.iter_mut().zip(&k[ci * f..(ci + 1) * f]) {
                *a += xv * kv;
            }
        }
    }
    Tensor::new(vec![h, w, f], out)
}

pub fn pointwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let (h, w, c) = hwc(input, "pointwise input")?;
    let f = kernel.shape()[1];
    if grad_out.shape() != [h, w, f] {
        return Err(NnError::Shape(format!(
            "pointwise backward: gradient shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let k = kernel.data();
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); f];
    let mut gx = need_input_grad.then(|| vec![T::zero(); input.len()]);
    for (p, (xin, gout)) in input
        .data()
        .chunks_exact(c)
        .zip(grad_out.data().chunks_exact(f))
        .enumerate()
    {
        for (b, &gv) in gb.iter_mut().zip(gout) {
            *b += gv;
        }
        for (ci, &xv) in xin.iter().enumerate() {
            let krow = &k[ci * f..(ci + 1) * f];
            if xv != T::zero() {
                for (gkv, &gv) in gk[ci * f..(ci + 1) * f].iter_mut().zip(gout) {
                    *gkv += xv * gv;
                }
            }
            if let Some(gx) = gx.as_mut() {
                let mut s = T::zero();
                for (&kv, &gv) in krow.iter().zip(gout) {
                    s += kv * gv;
                }
                gx[p * c + ci] = s;
            }
        }
    }
    let gx = gx
        .map(|d| Tensor::new(input.shape().to_vec(), d))
        .transpose()?;
    Ok((
        gx,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![f], gb)?,
    ))
}

/// Per-channel mean over the spatial extent: `H x W x C -> 1 x 1 x C`.
pub fn global_average_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (h, w, c) = hwc(input, "global_average_pool input")?;
    let mut sums = vec![T::zero(); c];
    for px in input.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = T::of_f64((h * w) as f64);
    for s in &mut sums {
        *s = *s / n;
    }
    Tensor::new(vec![1, 1, c], sums)
}

pub fn global_average_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    if grad_out.len() != c {
        return Err(NnError::Shape(format!(
            "pool backward: gradient has {} entries, expected {c}",
            grad_out.len()
        )));
    }
    let n = T::of_f64((h * w) as f64);
    let per: Vec<T> = grad_out.data().iter().map(|&g| g / n).collect();
    let mut data = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        data.extend_from_slice(&per);
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// `y_j = sum_i x_i * W[i][j] + b_j` with `W` shaped `n x m`. Any input shape
/// with `n` elements is accepted and treated as a flat vector.
pub fn dense<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    weight.expect_rank(2, "dense weight")?;
    let (n, m) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != n {
        return Err(NnError::Shape(format!(
            "dense: input has {} entries, weight expects {n}",
            x.len()
        )));
    }
    if bias.len() != m {
        return Err(NnError::Shape(format!(
            "dense: bias has {} entries, expected {m}",
            bias.len()
        )));
    }
    let mut y = bias.data().to_vec();
    for (&xv, row) in x.data().iter().zip(weight.data().chunks_exact(m)) {
        if xv == T::zero() {
            continue;
        }
        for (yv, &wv) in y.iter_mut().zip(row) {
            *yv += xv * wv;
        }
    }
    Tensor::new(vec![m], y)
}

/// Gradients of a dense layer: `(input, weight, bias)`.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let (n, m) = (weight.shape()[0], weight.shape()[1]);
    if grad_out.len() != m || x.len() != n {
        return Err(NnError::Shape("dense backward: shape mismatch".into()));
    }
    let g = grad_out.data();
    let mut gw = vec![T::zero(); n * m];
    for (&xv, row) in x.data().iter().zip(gw.chunks_exact_mut(m)) {
        if xv == T::zero() {
            continue;
        }
        for (r, &gv) in row.iter_mut().zip(g) {
            *r = xv * gv;
        }
    }
    let gx = if need_input_grad {
        let d: Vec<T> = weight
            .data()
            .chunks_exact(m)
            .map(|row| {
                row.iter()
                    .zip(g)
                    .fold(T::zero(), |acc, (&wv, &gv)| acc + wv * gv)
            })
            .collect();
        Some(Tensor::new(x.shape().to_vec(), d)?)
    } else {
        None
    };
    Ok((
        gx,
        Tensor::new(vec![n, m], gw)?,
        grad_out.clone().reshape(&[m])?,
    ))
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask holds
/// the per-element multiplier. Infer mode is the identity.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidDropout(rate));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = T::of_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                scale
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

/// [`dropout`] driven by a fresh generator seeded with `seed`.
pub fn dropout_seeded<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<Tensor<T>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dropout(x, rate, mode, &mut rng).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_branches() {
        let x = t(&[4], &[-1.0, 0.0, 2.0, -0.5]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(relu(&t(&[1], &[-2.5])).data(), &[0.0]);
        assert_eq!(relu(&t(&[1], &[3.0])).data(), &[3.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64; 4]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let p = softmax(&[1.0f64.ln(), 3.0f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);

        // 1/(1+e^-1) evaluated in f64: 0.7310585786300049
        let big = softmax(&[1000.0f32, 999.0]).unwrap();
        let small = softmax(&[1.0f32, 0.0]).unwrap();
        assert!((big[0] - 0.731_058_6).abs() < 1e-6);
        assert!((big[1] - 0.268_941_4).abs() < 1e-6);
        assert!((big[0] - small[0]).abs() < 1e-7);
    }

    #[test]
    fn softmax_rejects_short_input() {
        assert!(matches!(
            softmax::<f32>(&[]),
            Err(NnError::TooFewClasses(0))
        ));
        assert!(matches!(softmax(&[1.0f32]), Err(NnError::TooFewClasses(1))));
        assert!(Logits::new(vec![0.5f32]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy(&[0.0f64, 1.0], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
        for class in 0..4 {
            let (loss, _) = cross_entropy(&[0.25f64; 4], class).unwrap();
            assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        }
        assert!(matches!(
            cross_entropy(&[0.5f64, 0.5], 2),
            Err(NnError::ClassOutOfRange {
                class: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn conv_identity_and_constant() {
        let x = t(&[3, 4, 1], &(0..12).map(f64::from).collect::<Vec<_>>());
        let k = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(conv2d(&x, &k, None, 1, Padding::Valid).unwrap(), x);

        let c = Tensor::full(&[5, 5, 1], 0.7f64);
        let ones = Tensor::full(&[3, 3, 1, 1], 1.0f64);
        let y = conv2d(&c, &ones, None, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| (v - 6.3).abs() < 1e-12));
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 2, 1]);
        let k = Tensor::<f32>::zeros(&[3, 3, 1, 1]);
        assert!(conv2d(&x, &k, None, 1, Padding::Valid).is_err());
        assert!(conv2d(&x, &k, None, 1, Padding::Same).is_ok());
        let k2 = Tensor::<f32>::zeros(&[1, 1, 2, 1]);
        assert!(conv2d(&x, &k2, None, 1, Padding::Valid).is_err());
    }

    #[test]
    fn same_padding_geometry() {
        let g = conv_geometry(96, 96, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (48, 48, 0, 0));
        let g = conv_geometry(5, 5, 3, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (5, 1));
        let g = conv_geometry(7, 7, 3, 3, 2, Padding::Valid).unwrap();
        assert_eq!(g.out_h, 3);
    }

    #[test]
    fn depthwise_identity_and_no_mixing() {
        let mut data = Vec::new();
        for i in 0..9 {
            data.push(i as f64 + 1.0);
            data.push(0.0);
        }
        let x = t(&[3, 3, 2], &data);
        let k = Tensor::full(&[1, 1, 2], 1.0f64);
        assert_eq!(
            depthwise_conv2d(&x, &k, None, 1, Padding::Valid).unwrap(),
            x
        );

        let k3 = Tensor::full(&[3, 3, 2], 0.5f64);
        let y = depthwise_conv2d(&x, &k3, None, 1, Padding::Same).unwrap();
        assert!(y.data().iter().skip(1).step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_examples() {
        let c = Tensor::full(&[3, 2, 1], 4.5f64);
        assert_eq!(global_average_pool(&c).unwrap().data(), &[4.5]);
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_average_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn dense_examples() {
        let x = t(&[2], &[1.0, 1.0]);
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[0.0, 0.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);

        let x = t(&[3], &[0.3, -1.0, 2.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let z = Tensor::zeros(&[3]);
        assert_eq!(dense(&x, &eye, &z).unwrap().data(), x.data());
        assert!(dense(&t(&[2], &[1.0, 2.0]), &eye, &z).is_err());
    }

    #[test]
    fn dense_backward_is_outer_product() {
        let x = t(&[2], &[2.0, -1.0]);
        let w = t(&[2, 3], &[1.0, 0.0, 2.0, -1.0, 1.0, 0.5]);
        let g = t(&[3], &[0.5, 1.0, -2.0]);
        let (gx, gw, gb) = dense_backward(&x, &w, &g, true).unwrap();
        assert_eq!(gw.data(), &[1.0, 2.0, -4.0, -0.5, -1.0, 2.0]);
        assert_eq!(gb.data(), g.data());
        assert_eq!(gx.unwrap().data(), &[0.5 - 4.0, -0.5 + 1.0 - 1.0]);
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::full(&[16], 1.5f32);
        assert_eq!(dropout_seeded(&x, 0.75, Mode::Infer, 1).unwrap(), x);
        assert_eq!(dropout_seeded(&x, 0.0, Mode::Train, 1).unwrap(), x);
        assert!(matches!(
            dropout_seeded(&x, 1.0, Mode::Train, 1),
            Err(NnError::InvalidDropout(_))
        ));
        let a = dropout_seeded(&x, 0.75, Mode::Train, 9).unwrap();
        let b = dropout_seeded(&x, 0.75, Mode::Train, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 6.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        // Each output is 0 or 4 with P(4) = 0.25: mean 1, std sqrt(3).
        let trials = 100_000;
        let x = Tensor::full(&[trials], 1.0f64);
        let y = dropout_seeded(&x, 0.75, Mode::Train, 2024).unwrap();
        let mean = y.data().iter().sum::<f64>() / trials as f64;
        let se = 3.0f64.sqrt() / (trials as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }
}
