use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, Matrix};
use super::PcaSvmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Soft-margin constant; the regulariser is `lambda = 1 / (C n)`.
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 60,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<(), PcaSvmError> {
        let bad = |m: String| Err(PcaSvmError::InvalidConfig(m));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// One-vs-rest linear SVM: `weights` is `K x k`, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub c: f64,
}

/// Per-class objective after each epoch, for the iterate that is kept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SvmReport {
    pub initial_objective: Vec<f64>,
    pub objective: Vec<Vec<f64>>,
}

/// Trains one binary hinge-loss classifier per class by seeded SGD on
/// `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`. The best iterate seen at
/// an epoch boundary is retained, so the reported objective never rises.
pub fn svm_train(
    features: &Matrix,
    labels: &[usize],
    config: &SvmConfig,
) -> Result<(SvmModel, SvmReport), PcaSvmError> {
    config.validate()?;
    let (n, k) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(PcaSvmError::LabelCount {
            features: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(PcaSvmError::TooFewSamples {
            needed: 2,
            found: 0,
        });
    }
    if !features.data().iter().all(|v| v.is_finite()) {
        return Err(PcaSvmError::NonFinite("features"));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(PcaSvmError::SingleClass);
    }
    let lambda = 1.0 / (config.c * n as f64);

    let mut weights = Matrix::zeros(classes, k);
    let mut biases = vec![0.0; classes];
    let mut report = SvmReport {
        initial_objective: Vec::with_capacity(classes),
        objective: vec![Vec::with_capacity(config.epochs); classes],
    };
    for class in 0..classes {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(class as u64));
        let mut w = vec![0.0; k];
        let mut b = 0.0;
        let mut best = (w.clone(), b, objective(features, &y, &w, b, lambda));
        report.initial_objective.push(best.2);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let eta = config.learning_rate / ((epoch + 1) as f64).sqrt();
            for &i in &order {
                let x = features.row(i);
                let margin = y[i] * (dot(&w, x) + b);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    let step = eta * y[i];
                    w.iter_mut().zip(x).for_each(|(v, &xi)| *v += step * xi);
                    b += step;
                }
            }
            let obj = objective(features, &y, &w, b, lambda);
            if obj < best.2 {
                best = (w.clone(), b, obj);
            }
            report.objective[class].push(best.2);
        }
        weights.row_mut(class).copy_from_slice(&best.0);
        biases[class] = best.1;
    }
    Ok((
        SvmModel {
            weights,
            biases,
            c: config.c,
        },
        report,
    ))
}

fn objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = (0..x.rows())
        .map(|i| (1.0 - y[i] * (dot(w, x.row(i)) + b)).max(0.0))
        .sum::<f64>()
        / x.rows() as f64;
    0.5 * lambda * dot(w, w) + hinge
}

impl SvmModel {
    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn decision_values(&self, z: &[f64]) -> Result<Vec<f64>, PcaSvmError> {
        if z.len() != self.weights.cols() {
            return Err(PcaSvmError::DimensionMismatch {
                expected: self.weights.cols(),
                found: z.len(),
            });
        }
        Ok((0..self.num_classes())
            .map(|c| dot(self.weights.row(c), z) + self.biases[c])
            .collect())
    }

    /// Class with the largest decision value; ties go to the lowest index.
    pub fn predict(&self, z: &[f64]) -> Result<usize, PcaSvmError> {
        let scores = self.decision_values(z)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }
}
