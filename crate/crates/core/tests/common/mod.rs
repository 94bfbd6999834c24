//! Independent oracles shared by the integration tests and the acceptance
//! harness: naive-loop kernels, finite-difference gradient checks and a
//! brute-force PCA projector.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signcast_core::nn::{Layer, LayerSpec, Mode, Network, Padding, Tensor};
use signcast_core::pca_svm::{Matrix, PcaModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Output extent and leading pad for one axis, written out from the
/// definitions rather than shared with the library.
fn axis(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, i64) {
    match padding {
        Padding::Valid => ((input - k) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, (total / 2) as i64)
        }
    }
}

pub fn naive_conv2d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    padding: Padding,
) -> Tensor<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, f) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, pt) = axis(h, kh, stride, padding);
    let (ow, pl) = axis(w, kw, stride, padding);
    let mut out = vec![0.0; oh * ow * f];
    for oy in 0..oh {
        for ox in 0..ow {
            for fi in 0..f {
                let mut s = b.data()[fi];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let iy = (oy * stride + dy) as i64 - pt;
                        let ix = (ox * stride + dx) as i64 - pl;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for ci in 0..c {
                            let xv = x.data()[(iy as usize * w + ix as usize) * c + ci];
                            let kv = k.data()[((dy * kw + dx) * c + ci) * f + fi];
                            s += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * f + fi] = s;
            }
        }
    }
    Tensor::new(vec![oh, ow, f], out).unwrap()
}

pub fn naive_depthwise(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    padding: Padding,
) -> Tensor<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let (oh, pt) = axis(h, kh, stride, padding);
    let (ow, pl) = axis(w, kw, stride, padding);
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..c {
                let mut s = b.data()[ci];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let iy = (oy * stride + dy) as i64 - pt;
                        let ix = (ox * stride + dx) as i64 - pl;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        s += x.data()[(iy as usize * w + ix as usize) * c + ci]
                            * k.data()[(dy * kw + dx) * c + ci];
                    }
                }
                out[(oy * ow + ox) * c + ci] = s;
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out).unwrap()
}

pub fn naive_dense(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, m) = (wt.shape()[0], wt.shape()[1]);
    let y = (0..m)
        .map(|j| {
            b.data()[j]
                + (0..n)
                    .map(|i| x.data()[i] * wt.data()[i * m + j])
                    .sum::<f64>()
        })
        .collect();
    Tensor::new(vec![m], y).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs `cases` randomized comparisons of each kernel against its naive
/// loop and returns the worst absolute difference per kernel.
pub fn oracle_sweep(cases: usize, seed: u64) -> [(&'static str, f64); 3] {
    use signcast_core::nn::ops;
    let mut r = rng(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..cases {
        let kh = r.random_range(1..=3);
        let kw = r.random_range(1..=3);
        let h = r.random_range(kh..=7);
        let w = r.random_range(kw..=7);
        let c = r.random_range(1..=4);
        let f = r.random_range(1..=4);
        let stride = r.random_range(1..=2);
        let padding = if r.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let x = random_tensor(&[h, w, c], &mut r);

        let k = random_tensor(&[kh, kw, c, f], &mut r);
        let b = random_tensor(&[f], &mut r);
        let got = ops::conv2d(&x, &k, Some(&b), stride, padding).unwrap();
        worst[0] = worst[0].max(max_abs_diff(
            &got,
            &naive_conv2d(&x, &k, &b, stride, padding),
        ));

        let k = random_tensor(&[kh, kw, c], &mut r);
        let b = random_tensor(&[c], &mut r);
        let got = ops::depthwise_conv2d(&x, &k, Some(&b), stride, padding).unwrap();
        worst[1] = worst[1].max(max_abs_diff(
            &got,
            &naive_depthwise(&x, &k, &b, stride, padding),
        ));

        let n = h * w * c;
        let wt = random_tensor(&[n, f], &mut r);
        let b = random_tensor(&[f], &mut r);
        let got = ops::dense(&x, &wt, &b).unwrap();
        worst[2] = worst[2].max(max_abs_diff(&got, &naive_dense(&x, &wt, &b)));
    }
    [
        ("conv2d", worst[0]),
        ("depthwise_conv2d", worst[1]),
        ("dense", worst[2]),
    ]
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|)`, with the denominator floored so that two
/// vanishing gradients compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOLERANCE && self.checked > 0
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Finite-difference check of one layer's parameter and input gradients
/// under the loss `sum(r * layer(x))` for a random `r`.
pub fn check_layer(name: &str, spec: &LayerSpec, input_shape: &[usize], seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut layer: Layer<f64> = Layer::init(spec, input_shape, &mut r).unwrap();
    // Non-zero biases so that every term contributes.
    for p in layer.params_mut() {
        for v in p.data_mut() {
            *v = r.random_range(-1.0..1.0);
        }
    }
    let x = random_tensor(input_shape, &mut r);
    let out_shape = spec.output_shape(input_shape).unwrap();
    let weights = random_tensor(&out_shape, &mut r);
    let forward = |l: &Layer<f64>, x: &Tensor<f64>| {
        let (y, _) = l.forward(x, Mode::Infer, &mut rng(0)).unwrap();
        weighted_sum(&y, &weights)
    };
    let (y, mask) = layer.forward(&x, Mode::Infer, &mut rng(0)).unwrap();
    let (gx, gp) = layer
        .backward(&x, &y, mask.as_deref(), &weights, true)
        .unwrap();
    let gx = gx.unwrap();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = forward(&layer, &xp);
        xp.data_mut()[i] = orig - FD_STEP;
        let down = forward(&layer, &xp);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_error(gx.data()[i], (up - down) / (2.0 * FD_STEP)));
        checked += 1;
    }
    for (pi, g) in gp.iter().enumerate() {
        for i in 0..g.len() {
            let orig = layer.params_mut()[pi].data()[i];
            layer.params_mut()[pi].data_mut()[i] = orig + FD_STEP;
            let up = forward(&layer, &x);
            layer.params_mut()[pi].data_mut()[i] = orig - FD_STEP;
            let down = forward(&layer, &x);
            layer.params_mut()[pi].data_mut()[i] = orig;
            worst = worst.max(rel_error(g.data()[i], (up - down) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    }
}

/// Every parameterised layer kind, with both padding modes and strides.
pub fn layer_checks(seed: u64) -> Vec<GradCheck> {
    let cases: Vec<(&str, LayerSpec, Vec<usize>)> = vec![
        (
            "conv2d 3x3 same stride 2",
            LayerSpec::Conv2d {
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
                filters: 3,
            },
            vec![6, 5, 2],
        ),
        (
            "conv2d 2x2 valid stride 1",
            LayerSpec::Conv2d {
                kernel: 2,
                stride: 1,
                padding: Padding::Valid,
                filters: 2,
            },
            vec![4, 4, 3],
        ),
        (
            "depthwise 3x3 same stride 2",
            LayerSpec::DepthwiseConv2d {
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
            },
            vec![5, 6, 3],
        ),
        (
            "depthwise 3x3 valid stride 1",
            LayerSpec::DepthwiseConv2d {
                kernel: 3,
                stride: 1,
                padding: Padding::Valid,
            },
            vec![5, 5, 2],
        ),
        (
            "pointwise",
            LayerSpec::PointwiseConv2d { filters: 4 },
            vec![3, 3, 3],
        ),
        ("dense", LayerSpec::Dense { units: 5 }, vec![7]),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, (name, spec, shape))| check_layer(name, spec, shape, seed + i as u64))
        .collect()
}

/// Checks a network's parameter gradients under cross-entropy on a fixed
/// class, with train-mode dropout whose mask is pinned by reseeding.
/// At most `per_tensor` entries of each parameter tensor are probed.
pub fn check_network(
    name: &str,
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    class: usize,
    per_tensor: usize,
    seed: u64,
) -> GradCheck {
    let dropout_seed = seed ^ 0x5eed;
    let loss = |net: &Network<f64>| {
        let (p, _) = net
            .forward_recorded(x, Mode::Train, &mut rng(dropout_seed))
            .unwrap();
        -p.data()[class].ln()
    };
    let (p, trace) = net
        .forward_recorded(x, Mode::Train, &mut rng(dropout_seed))
        .unwrap();
    let mut g = p.data().to_vec();
    g[class] -= 1.0;
    let grads = net
        .backward_logits(&trace, &Tensor::new(p.shape().to_vec(), g).unwrap())
        .unwrap();

    let mut pick = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (ti, gt) in grads.tensors().iter().enumerate() {
        let n = gt.len();
        let idx: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        for i in idx {
            let orig = net.params_mut()[ti].data()[i];
            net.params_mut()[ti].data_mut()[i] = orig + FD_STEP;
            let up = loss(net);
            net.params_mut()[ti].data_mut()[i] = orig - FD_STEP;
            let down = loss(net);
            net.params_mut()[ti].data_mut()[i] = orig;
            worst = worst.max(rel_error(gt.data()[i], (up - down) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    }
}

/// The classifier head (pool, 1000-unit ReLU layer, 75% dropout, logits,
/// softmax) on a small random feature map, every parameter probed.
pub fn head_check(seed: u64) -> GradCheck {
    let specs = vec![
        ("pool".to_string(), LayerSpec::GlobalAvgPool),
        ("dense".to_string(), LayerSpec::Dense { units: 1000 }),
        ("relu".to_string(), LayerSpec::Relu),
        ("dropout".to_string(), LayerSpec::Dropout { rate: 0.75 }),
        ("logits".to_string(), LayerSpec::Dense { units: 4 }),
        ("softmax".to_string(), LayerSpec::Softmax),
    ];
    let mut r = rng(seed);
    let mut net = Network::<f64>::build(&[3, 3, 6], &specs, &mut r).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    let x = random_tensor(&[3, 3, 6], &mut r);
    check_network("classifier head", &mut net, &x, 1, usize::MAX, seed)
}

/// The full classifier at a tiny input size, sampled parameters.
pub fn full_model_check(seed: u64) -> GradCheck {
    use signcast_core::model::ModelConfig;
    let config = ModelConfig {
        input_height: 12,
        input_width: 12,
        ..ModelConfig::new(3)
    };
    let mut r = rng(seed);
    let mut net =
        Network::<f64>::build(&config.input_shape(), &config.layer_specs(), &mut r).unwrap();
    // Zero biases leave dead channels sitting exactly on the ReLU kink.
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let x = random_tensor(&config.input_shape(), &mut r);
    check_network("full model", &mut net, &x, 2, 24, seed)
}

/// `round(i (L - 1) / (T - 1))`, half up, evaluated in floating point.
pub fn resample_oracle(len: usize, target: usize) -> Vec<usize> {
    if target == 1 {
        return vec![0];
    }
    (0..target)
        .map(|i| ((i * (len - 1)) as f64 / (target - 1) as f64 + 0.5).floor() as usize)
        .collect()
}

/// Projector onto the top-`k` eigenvectors of the sample covariance, from
/// nalgebra's symmetric eigensolver.
pub fn projector_oracle(rows: &[Vec<f64>], k: usize) -> nalgebra::DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let x = nalgebra::DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centred = nalgebra::DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut p = nalgebra::DMatrix::zeros(d, d);
    for &i in order.iter().take(k) {
        let v = eig.eigenvectors.column(i);
        p += v * v.transpose();
    }
    p
}

pub fn projector(model: &PcaModel) -> nalgebra::DMatrix<f64> {
    let c: &Matrix = &model.components;
    let cm = nalgebra::DMatrix::from_row_slice(c.rows(), c.cols(), c.data());
    cm.transpose() * cm
}

/// Worst projector discrepancy over `trials` random 8x5 matrices and every
/// admissible `k`.
pub fn pca_projector_sweep(trials: usize, seed: u64) -> f64 {
    use signcast_core::pca_svm::pca_fit;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        for k in 1..=5 {
            let model = pca_fit(&m, k).unwrap();
            let diff = (projector(&model) - projector_oracle(&rows, k)).abs().max();
            worst = worst.max(diff);
        }
    }
    worst
}
