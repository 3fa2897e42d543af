//! Histograms over confidences, activations and weight changes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config, input, Error, Result};
use crate::math::exact_mean;
use crate::metrics::PredictionBatch;
use crate::nn::DenseNetwork;

pub const DEFAULT_BINS_1D: usize = 50;
pub const DEFAULT_BINS_2D: usize = 40;

fn linear_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * (i as f64 / bins as f64))
        .collect();
    e[bins] = hi;
    e
}

/// Bin `i` covers `[edges[i], edges[i + 1])`; the last bin is closed. Values
/// outside the edges are counted in the nearest end bin.
fn locate(edges: &[f64], v: f64) -> usize {
    let inner = &edges[1..edges.len() - 1];
    inner.partition_point(|&e| e <= v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram1D {
    /// Equal-width histogram over `range`, or over the data's own min..max.
    pub fn from_values(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Self> {
        if bins == 0 {
            return Err(config("histogram needs at least one bin"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("histogram values"));
        }
        let (lo, hi) = match range {
            Some((lo, hi)) => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(config(format!("histogram range ({lo}, {hi}) is empty")));
                }
                (lo, hi)
            }
            None => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if values.is_empty() {
                    (0.0, 1.0)
                } else if lo == hi {
                    (lo - 0.5, lo + 0.5)
                } else {
                    (lo, hi)
                }
            }
        };
        let edges = linear_edges(lo, hi, bins);
        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[locate(&edges, v)] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `counts[i][j]`: samples in x-bin `i` and y-bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2D {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Joint histogram of baseline vs method confidence, with the sample mass
/// above (`method bin > base bin`), on and below the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTransfer {
    pub histogram: Histogram2D,
    pub above: u64,
    pub on: u64,
    pub below: u64,
}

impl ConfidenceTransfer {
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = (self.above + self.on + self.below) as f64;
        (self.above as f64 / n, self.on as f64 / n, self.below as f64 / n)
    }
}

pub fn confidence_transfer(
    base: &PredictionBatch,
    method: &PredictionBatch,
    bins: usize,
) -> Result<ConfidenceTransfer> {
    if base.len() != method.len() {
        return Err(input(format!(
            "baseline has {} samples but method has {}",
            base.len(),
            method.len()
        )));
    }
    if bins == 0 {
        return Err(config("histogram needs at least one bin"));
    }
    let edges = linear_edges(0.0, 1.0, bins);
    let mut counts = vec![vec![0u64; bins]; bins];
    let (mut above, mut on, mut below) = (0, 0, 0);
    for (&cb, &cm) in base.confidences().iter().zip(method.confidences()) {
        let i = locate(&edges, cb);
        let j = locate(&edges, cm);
        counts[i][j] += 1;
        match j.cmp(&i) {
            core::cmp::Ordering::Greater => above += 1,
            core::cmp::Ordering::Equal => on += 1,
            core::cmp::Ordering::Less => below += 1,
        }
    }
    Ok(ConfidenceTransfer {
        histogram: Histogram2D {
            x_edges: edges.clone(),
            y_edges: edges,
            counts,
        },
        above,
        on,
        below,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationStage {
    Pre,
    #[default]
    Post,
}

fn check_selection(net: &DenseNetwork, layers: &[usize]) -> Result<()> {
    if layers.is_empty() {
        return Err(config("layer selection is empty"));
    }
    for &l in layers {
        if l < net.head_start() || l >= net.layer_count() {
            return Err(config(format!(
                "layer {l} is not a head layer (head spans {}..{})",
                net.head_start(),
                net.layer_count()
            )));
        }
    }
    Ok(())
}

/// The first two head layers, or fewer if the head is shorter.
pub fn default_selection(net: &DenseNetwork) -> Vec<usize> {
    (net.head_start()..net.layer_count()).take(2).collect()
}

fn selected_activations<F: FnMut(&[f64])>(
    net: &DenseNetwork,
    data: &LabeledDataset,
    layers: &[usize],
    stage: ActivationStage,
    mut visit: F,
) -> Result<()> {
    check_selection(net, layers)?;
    let mut buf = Vec::new();
    for (x, _) in data.iter() {
        let trace = net.forward_trace(x)?;
        let src = match stage {
            ActivationStage::Pre => &trace.pre,
            ActivationStage::Post => &trace.post,
        };
        buf.clear();
        for &l in layers {
            buf.extend_from_slice(&src[l]);
        }
        visit(&buf);
    }
    Ok(())
}

/// Histogram of every activation value in the selected layers over all samples.
pub fn feature_magnitude_hist(
    net: &DenseNetwork,
    data: &LabeledDataset,
    layers: &[usize],
    stage: ActivationStage,
    bins: usize,
) -> Result<Histogram1D> {
    let mut values = Vec::new();
    selected_activations(net, data, layers, stage, |a| values.extend_from_slice(a))?;
    Histogram1D::from_values(&values, bins, None)
}

/// Per-sample fraction of selected post-activations strictly above `threshold`.
pub fn nonzero_fractions(
    net: &DenseNetwork,
    data: &LabeledDataset,
    layers: &[usize],
    threshold: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    selected_activations(net, data, layers, ActivationStage::Post, |a| {
        let active = a.iter().filter(|&&v| v > threshold).count();
        out.push(active as f64 / a.len() as f64);
    })?;
    Ok(out)
}

pub fn sparsity_hist(
    net: &DenseNetwork,
    data: &LabeledDataset,
    layers: &[usize],
    threshold: f64,
    bins: usize,
) -> Result<Histogram1D> {
    Histogram1D::from_values(&nonzero_fractions(net, data, layers, threshold)?, bins, Some((0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiff {
    pub histogram: Histogram1D,
    pub count: usize,
    pub mean_delta: f64,
    /// Share of head weights that strictly decreased.
    pub fraction_negative: f64,
}

/// Elementwise `after - before` over the head weights.
pub fn weight_diff_hist(before: &DenseNetwork, after: &DenseNetwork, bins: usize) -> Result<WeightDiff> {
    if !before.same_architecture(after) {
        return Err(input("networks have different architectures"));
    }
    let deltas: Vec<f64> = before
        .head()
        .iter()
        .zip(after.head())
        .flat_map(|(b, a)| b.weights().iter().zip(a.weights()).map(|(wb, wa)| wa - wb))
        .collect();
    let negative = deltas.iter().filter(|&&d| d < 0.0).count();
    Ok(WeightDiff {
        histogram: Histogram1D::from_values(&deltas, bins, None)?,
        count: deltas.len(),
        mean_delta: exact_mean(&deltas),
        fraction_negative: negative as f64 / deltas.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    #[test]
    fn constant_values_form_single_spike() {
        let h = Histogram1D::from_values(&[0.0; 7], 50, None).unwrap();
        assert_eq!(h.total(), 7);
        let k = h.counts.iter().position(|&c| c > 0).unwrap();
        assert_eq!(h.counts[k], 7);
        assert_eq!(h.edges[k], 0.0);
    }

    #[test]
    fn last_bin_is_closed() {
        let h = Histogram1D::from_values(&[0.0, 0.5, 1.0], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
    }

    #[test]
    fn identical_confidences_stay_on_diagonal() {
        let b = PredictionBatch::new(vec![0.9, 0.1, 0.3, 0.7, 0.5, 0.5], vec![0, 1, 0], 2).unwrap();
        let t = confidence_transfer(&b, &b, 40).unwrap();
        assert_eq!((t.above, t.on, t.below), (0, 3, 0));
        assert_eq!(t.histogram.total(), 3);
        for (i, row) in t.histogram.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert!(i == j || c == 0);
            }
        }
        let short = PredictionBatch::new(vec![0.9, 0.1], vec![0], 2).unwrap();
        assert!(confidence_transfer(&b, &short, 40).is_err());
    }

    #[test]
    fn selection_must_lie_in_head() {
        let net = DenseNetwork::seeded(&[2, 3, 2], 1, true, 0).unwrap();
        let data = LabeledDataset::from_flat(vec![0.1, 0.2], vec![0], 2, 2).unwrap();
        assert!(feature_magnitude_hist(&net, &data, &[0], ActivationStage::Post, 10).is_err());
        assert!(feature_magnitude_hist(&net, &data, &[1], ActivationStage::Post, 10).is_ok());
        assert_eq!(default_selection(&net), vec![1]);
    }

    #[test]
    fn negative_preactivations_are_fully_sparse() {
        let l0 = DenseLayer::new(2, 2, vec![-1.0, -1.0, -2.0, -1.0], None, Activation::Relu).unwrap();
        let l1 = DenseLayer::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], None, Activation::Identity).unwrap();
        let net = DenseNetwork::new(vec![l0, l1], 0).unwrap();
        let data = LabeledDataset::from_flat(vec![0.5, 0.2, 1.0, 3.0], vec![0, 1], 2, 2).unwrap();
        assert_eq!(nonzero_fractions(&net, &data, &[0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn weight_diff_counts_one_decrease() {
        let before = DenseNetwork::seeded(&[3, 4, 2], 0, false, 4).unwrap();
        let same = weight_diff_hist(&before, &before, 50).unwrap();
        assert_eq!(same.fraction_negative, 0.0);
        assert_eq!(same.mean_delta, 0.0);
        let mut after = before.clone();
        after.layer_mut(1).weights_mut()[3] -= 0.1;
        let d = weight_diff_hist(&before, &after, 50).unwrap();
        assert_eq!(d.count, 20);
        assert_eq!(d.fraction_negative, 1.0 / 20.0);
        let other = DenseNetwork::seeded(&[3, 5, 2], 0, false, 4).unwrap();
        assert!(weight_diff_hist(&before, &other, 50).is_err());
    }
}
