use super::linalg::{dot, norm, symmetric_eigen, Matrix};
use super::PcaSvmError;

/// Fitted principal components. `components` is `k x d` with orthonormal
/// rows sorted by descending explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub variances: Vec<f64>,
}

/// Relative eigenvalue cutoff below which a direction counts as having no
/// variance.
const RANK_TOL: f64 = 1e-10;

/// Fits `k` principal components to the rows of `data` (`n x d`).
///
/// When `d > n` the eigenproblem is solved on the `n x n` Gram matrix and
/// mapped back; directions with zero variance are completed to an
/// orthonormal set. Each component is signed so that its largest-magnitude
/// entry is positive.
pub fn pca_fit(data: &Matrix, k: usize) -> Result<PcaModel, PcaSvmError> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(PcaSvmError::TooFewSamples {
            needed: 2,
            found: n,
        });
    }
    let max = d.min(n - 1);
    if k == 0 || k > max {
        return Err(PcaSvmError::InvalidComponents { requested: k, max });
    }
    if !data.data().iter().all(|v| v.is_finite()) {
        return Err(PcaSvmError::NonFinite("training data"));
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centred = data.clone();
    for i in 0..n {
        for (v, &m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let divisor = (n - 1) as f64;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    if d <= n {
        let (vals, vecs) = symmetric_eigen(&centred.covariance(divisor));
        for i in 0..k {
            rows.push(vecs.row(i).to_vec());
            variances.push(vals[i].max(0.0));
        }
    } else {
        let (vals, vecs) = symmetric_eigen(&centred.gram(divisor));
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        for i in 0..k {
            let lambda = vals[i];
            if !(lambda > RANK_TOL * top) || top == 0.0 {
                break;
            }
            // v = X^T u / sqrt(lambda (n - 1))
            let u = vecs.row(i);
            let mut v = vec![0.0; d];
            for (r, &ur) in u.iter().enumerate() {
                for (vj, &x) in v.iter_mut().zip(centred.row(r)) {
                    *vj += ur * x;
                }
            }
            let s = 1.0 / (lambda * divisor).sqrt();
            v.iter_mut().for_each(|x| *x *= s);
            rows.push(v);
            variances.push(lambda);
        }
    }

    orthonormalise(&mut rows);
    complete_basis(&mut rows, k, d);
    variances.resize(k, 0.0);
    for r in &mut rows {
        fix_sign(r);
    }
    let components = Matrix::from_rows(&rows)?;
    Ok(PcaModel {
        mean,
        components,
        variances,
    })
}

/// Modified Gram-Schmidt in place; rows are assumed linearly independent.
fn orthonormalise(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        let (done, rest) = rows.split_at_mut(i);
        let r = &mut rest[0];
        for q in done.iter() {
            let p = dot(r, q);
            r.iter_mut().zip(q).for_each(|(x, &y)| *x -= p * y);
        }
        let nrm = norm(r);
        r.iter_mut().for_each(|x| *x /= nrm);
    }
}

/// Appends standard basis directions orthogonalised against the existing
/// rows until there are `k`.
fn complete_basis(rows: &mut Vec<Vec<f64>>, k: usize, d: usize) {
    let mut axis = 0;
    while rows.len() < k && axis < d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for q in rows.iter() {
                let p = dot(&e, q);
                e.iter_mut().zip(q).for_each(|(x, &y)| *x -= p * y);
            }
        }
        let nrm = norm(&e);
        if nrm > 1e-6 {
            e.iter_mut().for_each(|x| *x /= nrm);
            rows.push(e);
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaModel {
    pub fn num_components(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `C (x - mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, PcaSvmError> {
        if x.len() != self.input_dim() {
            return Err(PcaSvmError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.num_components())
            .map(|i| dot(self.components.row(i), &centred))
            .collect())
    }

    /// `mean + C^T z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>, PcaSvmError> {
        if z.len() != self.num_components() {
            return Err(PcaSvmError::DimensionMismatch {
                expected: self.num_components(),
                found: z.len(),
            });
        }
        let mut x = self.mean.clone();
        for (i, &zi) in z.iter().enumerate() {
            for (xj, &c) in x.iter_mut().zip(self.components.row(i)) {
                *xj += zi * c;
            }
        }
        Ok(x)
    }

    /// Keeps only the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<PcaModel, PcaSvmError> {
        if k == 0 || k > self.num_components() {
            return Err(PcaSvmError::InvalidComponents {
                requested: k,
                max: self.num_components(),
            });
        }
        let d = self.input_dim();
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: Matrix::new(k, d, self.components.data()[..k * d].to_vec())?,
            variances: self.variances[..k].to_vec(),
        })
    }
}
