//! PCA, linear discriminant analysis and 1-nearest-neighbour classification
//! on descriptor vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};

pub const LDA_RIDGE: f64 = 1e-6;

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(|r| r.len()).ok_or_else(|| config_err!("empty sample matrix"))?;
    if d == 0 {
        return Err(shape_err!("zero-dimensional samples"));
    }
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(shape_err!("row {} has {} values, expected {}", i, x[i].len(), d));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `k × dim`, row-major, orthonormal rows.
    pub components: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        pca_transform(self, x)
    }

    pub fn transform_batch(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.iter().map(|r| pca_transform(self, r)).collect()
    }

    /// `mean + componentsᵀ z`.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (i, &zi) in z.iter().enumerate() {
            for (xj, cj) in x.iter_mut().zip(self.component(i)) {
                *xj += zi * cj;
            }
        }
        x
    }
}

/// Top-`k` principal components of the population covariance of `x`.
pub fn pca_fit(x: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let d = check_rows(x)?;
    let n = x.len();
    if n < 2 {
        return Err(config_err!("PCA needs at least 2 samples, got {}", n));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(config_err!(
            "PCA k={} out of range 1..={} for {} samples of dimension {}",
            k,
            (n - 1).min(d),
            n,
            d
        ));
    }
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let mut cov = centered.transpose() * &centered / n as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for &i in &order[..k] {
        let col = eig.eigenvectors.column(i);
        let lead = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
        eigenvalues.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaModel {
        dim: d,
        mean,
        components,
        eigenvalues,
    })
}

pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim {
        return Err(shape_err!("PCA expects {} values, got {}", model.dim, x.len()));
    }
    Ok((0..model.k())
        .map(|i| {
            model
                .component(i)
                .iter()
                .zip(x.iter().zip(&model.mean))
                .map(|(c, (v, m))| c * (v - m))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: usize,
    pub dim: usize,
    /// `classes × dim`, row-major.
    pub means: Vec<f64>,
    /// Regularized pooled within-class covariance, `dim × dim`.
    pub covariance: Vec<f64>,
    pub priors: Vec<f64>,
    /// `Σ⁻¹ μ_c`, `classes × dim`.
    pub weights: Vec<f64>,
    /// `-½ μ_cᵀ Σ⁻¹ μ_c + log prior_c`.
    pub offsets: Vec<f64>,
}

impl LdaModel {
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(shape_err!("LDA expects {} values, got {}", self.dim, z.len()));
        }
        Ok((0..self.classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.offsets[c]
            })
            .collect())
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        lda_predict(self, z)
    }
}

/// Gaussian classifier with shared covariance. The pooled covariance divides
/// by `N - C` and gets a ridge of `LDA_RIDGE · trace / dim`.
pub fn lda_fit(z: &[Vec<f64>], labels: &[usize]) -> Result<LdaModel> {
    let d = check_rows(z)?;
    if labels.len() != z.len() {
        return Err(shape_err!("{} samples but {} labels", z.len(), labels.len()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(config_err!("LDA needs at least 2 samples per class; class {} has {}", c, counts[c]));
    }
    let n = z.len();
    let mut means = vec![0.0; classes * d];
    for (row, &l) in z.iter().zip(labels) {
        for (m, v) in means[l * d..(l + 1) * d].iter_mut().zip(row) {
            *m += v;
        }
    }
    for c in 0..classes {
        means[c * d..(c + 1) * d].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    let centered = DMatrix::from_fn(n, d, |i, j| z[i][j] - means[labels[i] * d + j]);
    let mut cov = centered.transpose() * &centered / (n - classes).max(1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let ridge = LDA_RIDGE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::Degenerate("pooled covariance is singular after regularization".into())
    })?;
    let l = chol.l();
    let diag: Vec<f64> = (0..d).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo > 0.0) || lo < 1e-14 * hi {
        return Err(Error::Degenerate(format!(
            "pooled covariance is numerically singular (pivot ratio {:e})",
            lo / hi
        )));
    }
    let mut weights = Vec::with_capacity(classes * d);
    let mut offsets = Vec::with_capacity(classes);
    for c in 0..classes {
        let mu = DVector::from_column_slice(&means[c * d..(c + 1) * d]);
        let w = chol.solve(&mu);
        offsets.push(-0.5 * mu.dot(&w) + (counts[c] as f64 / n as f64).ln());
        weights.extend(w.iter());
    }
    Ok(LdaModel {
        classes,
        dim: d,
        means,
        covariance: cov.transpose().as_slice().to_vec(),
        priors: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        weights,
        offsets,
    })
}

/// Highest discriminant; ties go to the lowest class index.
pub fn lda_predict(model: &LdaModel, z: &[f64]) -> Result<usize> {
    let scores = model.scores(z)?;
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Label of the nearest training row under the L1 distance; ties go to the
/// lowest row.
pub fn knn1_cityblock(train: &[Vec<f64>], labels: &[usize], query: &[f64]) -> Result<usize> {
    if train.is_empty() {
        return Err(config_err!("1-NN needs at least one training row"));
    }
    if labels.len() != train.len() {
        return Err(shape_err!("{} rows but {} labels", train.len(), labels.len()));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (i, row) in train.iter().enumerate() {
        if row.len() != query.len() {
            return Err(shape_err!("row {} has {} values, query has {}", i, row.len(), query.len()));
        }
        let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b).abs()).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(labels[best.1])
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
