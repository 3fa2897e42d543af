//! Calibration metrics over a batch of probability vectors.
//!
//! Every batch-level sum goes through [`exact_sum`], so the metrics are
//! bit-identical under any permutation of the samples.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, input, Error, Result};
use crate::loss::softmax_scaled;
use crate::math::{self, exact_mean, exact_sum, neg_log_floored};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 15;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `N x C` probabilities with labels, plus the derived top-1 prediction and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
    predictions: Vec<usize>,
    confidences: Vec<f64>,
}

impl PredictionBatch {
    pub fn new(probs: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::validate(&probs, &labels, classes)?;
        let predictions: Vec<usize> = probs.chunks_exact(classes).map(math::argmax).collect();
        Ok(Self::assemble(probs, labels, classes, predictions))
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(input("probability rows have different lengths"));
        }
        Self::new(rows.iter().flatten().copied().collect(), labels, classes)
    }

    /// Applies `softmax(z / temperature)` per row. Predictions come from the
    /// logits themselves, so they do not depend on `temperature`.
    pub fn from_logits(logits: &[Vec<f64>], labels: Vec<usize>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(config(format!("temperature {temperature} must be positive")));
        }
        let classes = logits.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(logits.len() * classes);
        let mut predictions = Vec::with_capacity(logits.len());
        for z in logits {
            if z.len() != classes {
                return Err(input("logit rows have different lengths"));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("logits"));
            }
            probs.extend(softmax_scaled(z, temperature));
            predictions.push(math::argmax(z));
        }
        Self::validate(&probs, &labels, classes)?;
        Ok(Self::assemble(probs, labels, classes, predictions))
    }

    fn validate(probs: &[f64], labels: &[usize], classes: usize) -> Result<()> {
        if labels.is_empty() {
            return Err(input("prediction batch is empty"));
        }
        if classes == 0 || probs.len() != labels.len() * classes {
            return Err(input(format!(
                "{} probabilities do not form {} rows of {classes} classes",
                probs.len(),
                labels.len()
            )));
        }
        for (i, (row, &y)) in probs.chunks_exact(classes).zip(labels).enumerate() {
            if y >= classes {
                return Err(input(format!("sample {i}: label {y} out of range")));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(input(format!("sample {i}: probabilities must be finite and >= 0")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(input(format!("sample {i}: probabilities sum to {s}")));
            }
        }
        Ok(())
    }

    fn assemble(probs: Vec<f64>, labels: Vec<usize>, classes: usize, predictions: Vec<usize>) -> Self {
        let confidences = probs
            .chunks_exact(classes)
            .zip(&predictions)
            .map(|(row, &k)| row[k])
            .collect();
        Self {
            probs,
            labels,
            classes,
            predictions,
            confidences,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn is_correct(&self, i: usize) -> bool {
        self.predictions[i] == self.labels[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Fraction correct; 0 for empty bins.
    pub accuracy: f64,
    /// Mean confidence; 0 for empty bins.
    pub confidence: f64,
}

/// Equal-width bins `((m-1)/M, m/M]`; a confidence of exactly 0 joins the first bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<Bin>,
}

#[inline]
fn edge(k: usize, m: usize) -> f64 {
    k as f64 / m as f64
}

/// Zero-based bin index of confidence `c` under `m` bins.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mut k = (libm::ceil(c * m as f64) as isize).clamp(1, m as isize) as usize;
    while k > 1 && c <= edge(k - 1, m) {
        k -= 1;
    }
    while k < m && c > edge(k, m) {
        k += 1;
    }
    k - 1
}

pub fn reliability_bins(batch: &PredictionBatch, m: usize) -> Result<ReliabilityBins> {
    if m == 0 {
        return Err(config("bin count must be at least 1"));
    }
    let mut conf: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut correct = vec![0usize; m];
    for (i, &c) in batch.confidences.iter().enumerate() {
        let k = bin_index(c, m);
        conf[k].push(c);
        correct[k] += usize::from(batch.is_correct(i));
    }
    let bins = (0..m)
        .map(|k| {
            let count = conf[k].len();
            let (accuracy, confidence) = if count == 0 {
                (0.0, 0.0)
            } else {
                (correct[k] as f64 / count as f64, exact_mean(&conf[k]))
            };
            Bin {
                low: edge(k, m),
                high: edge(k + 1, m),
                count,
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(ReliabilityBins { bins })
}

impl ReliabilityBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `sum_m |B_m| / N * |acc(B_m) - conf(B_m)|`.
    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        exact_sum(
            self.bins
                .iter()
                .filter(|b| b.count > 0)
                .map(|b| (b.count as f64 / n) * (b.accuracy - b.confidence).abs()),
        )
    }
}

pub fn ece(batch: &PredictionBatch, m: usize) -> Result<f64> {
    Ok(reliability_bins(batch, m)?.ece())
}

pub fn accuracy(batch: &PredictionBatch) -> f64 {
    let correct = (0..batch.len()).filter(|&i| batch.is_correct(i)).count();
    correct as f64 / batch.len() as f64
}

pub fn mean_confidence(batch: &PredictionBatch) -> f64 {
    exact_mean(&batch.confidences)
}

/// Mean negative log-likelihood of the true class (floored at `1e-12`).
pub fn nll(batch: &PredictionBatch) -> f64 {
    let terms: Vec<f64> = (0..batch.len())
        .map(|i| neg_log_floored(batch.probs(i)[batch.labels[i]]))
        .collect();
    exact_mean(&terms)
}

/// Mean squared distance to the one-hot label, in `[0, 2]`.
pub fn brier(batch: &PredictionBatch) -> f64 {
    let terms: Vec<f64> = (0..batch.len())
        .map(|i| {
            let y = batch.labels[i];
            batch
                .probs(i)
                .iter()
                .enumerate()
                .map(|(c, &p)| {
                    let d = p - if c == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum()
        })
        .collect();
    exact_mean(&terms)
}

/// Shannon entropy of one probability vector (natural log, `0 ln 0 = 0`).
pub fn row_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * math::ln(v))
        .sum::<f64>()
}

pub fn entropy(batch: &PredictionBatch) -> f64 {
    let terms: Vec<f64> = (0..batch.len()).map(|i| row_entropy(batch.probs(i))).collect();
    exact_mean(&terms)
}

/// Accuracy, ECE, NLL, Brier and mean entropy of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub entropy: f64,
}

impl MetricSet {
    pub fn evaluate(batch: &PredictionBatch, bins: usize) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(batch),
            ece: ece(batch, bins)?,
            nll: nll(batch),
            brier: brier(batch),
            entropy: entropy(batch),
        })
    }
}
