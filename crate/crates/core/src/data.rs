//! Labeled datasets, seeded splits and the Gaussian-cluster generator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};

/// Feature vectors stored row-major with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    class_count: usize,
}

impl LabeledDataset {
    pub fn from_flat(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(config(format!("need at least 2 classes, got {class_count}")));
        }
        if feature_dim == 0 {
            return Err(config("feature dimension must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(input(format!(
                "{} feature values do not fill {} rows of width {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(input(format!(
                "sample {i} has label {y} but there are {class_count} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(input("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            class_count,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(input(format!(
                "row {i} has {} features, expected {dim}",
                rows[i].len()
            )));
        }
        if rows.len() != labels.len() {
            return Err(input("row and label counts differ"));
        }
        let features = rows.iter().flatten().copied().collect();
        Self::from_flat(features, labels, dim.max(1), class_count)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.feature_dim)
            .zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.x(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            feature_dim: self.feature_dim,
            class_count: self.class_count,
        }
    }

    /// Shuffles with `seed` and cuts into train/validation/test parts.
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<[Self; 3]> {
        let idx = split_indices(self.len(), fractions, seed)?;
        Ok([self.subset(&idx[0]), self.subset(&idx[1]), self.subset(&idx[2])])
    }
}

/// Disjoint index sets of sizes `round(n f_train)`, `round(n f_val)` and the rest.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(config("split fractions must be nonnegative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(config(format!("split fractions sum to {total}, not 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = libm::round(n as f64 * fractions[0]) as usize;
    let n_val = (libm::round(n as f64 * fractions[1]) as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

/// Isotropic Gaussian class clusters.
///
/// Class means are `separation * N(0, I)`; samples are `mean + overlap * N(0, I)`.
/// Larger `overlap / separation` means more confusable classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub overlap: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            samples_per_class: 1000,
            separation: 1.0,
            overlap: 1.0,
        }
    }
}

pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<LabeledDataset> {
    if params.classes < 2 {
        return Err(config("synthetic data needs at least 2 classes"));
    }
    if params.dim == 0 || params.samples_per_class == 0 {
        return Err(config("synthetic dimension and class size must be positive"));
    }
    if !(params.overlap >= 0.0 && params.overlap.is_finite()) {
        return Err(config(format!(
            "degenerate covariance: overlap {} must be finite and nonnegative",
            params.overlap
        )));
    }
    if !params.separation.is_finite() {
        return Err(config("separation must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..params.classes * params.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            params.separation * z
        })
        .collect();

    let n = params.classes * params.samples_per_class;
    let mut labels: Vec<usize> = (0..n).map(|i| i % params.classes).collect();
    labels.shuffle(&mut rng);
    let mut features = vec![0.0; n * params.dim];
    for (row, &y) in features.chunks_exact_mut(params.dim).zip(&labels) {
        let mean = &means[y * params.dim..(y + 1) * params.dim];
        for (v, m) in row.iter_mut().zip(mean) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = m + params.overlap * z;
        }
    }
    LabeledDataset::from_flat(features, labels, params.dim, params.classes)
}
