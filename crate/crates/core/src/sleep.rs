//! Sleep replay consolidation of the plastic head.
//!
//! The head is run as a network of leaky integrate-and-fire units with
//! Heaviside output. Each step the head input is rate-coded into Bernoulli
//! spikes, every plastic layer integrates `alpha * W s` into its membrane
//! voltage, units above threshold spike and reset, and then each synapse into
//! a spiking unit is nudged up (presynaptic spike) or down (no presynaptic
//! spike). Weights live in their unscaled ANN form throughout, so the network
//! is usable as a classifier again as soon as the loop ends. Biases take no
//! part in the dynamics and are never modified.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config, input, Error, Result};
use crate::math::exact_mean;
use crate::nn::DenseNetwork;

/// Floor for layer scales when every observed activation is zero.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Sleep hyperparameters. Field names in JSON follow the usual hyperparameter
/// table headings; `stdp_neg` is stored signed and added as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepConfig {
    #[serde(rename = "Time Steps")]
    pub steps: usize,
    #[serde(rename = "dt")]
    pub dt: f64,
    #[serde(rename = "Decay Rate")]
    pub decay: f64,
    #[serde(rename = "Max Spiking Rate")]
    pub max_rate: f64,
    #[serde(rename = "Positive STDP")]
    pub stdp_pos: f64,
    #[serde(rename = "Negative STDP")]
    pub stdp_neg: f64,
    #[serde(rename = "Spiking Thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SleepConfig {
    pub fn validate(&self, plastic_layers: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(config("sleep needs at least one time step"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config(format!("dt {} must be positive", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(config(format!("decay {} outside [0, 1]", self.decay)));
        }
        if !(self.max_rate > 0.0 && self.max_rate.is_finite()) {
            return Err(config(format!("max rate {} must be positive", self.max_rate)));
        }
        if !(self.stdp_pos.is_finite() && self.stdp_neg.is_finite()) {
            return Err(config("plasticity increments must be finite"));
        }
        if self.thresholds.len() != plastic_layers {
            return Err(config(format!(
                "{} thresholds given for {plastic_layers} plastic layers",
                self.thresholds.len()
            )));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(config("thresholds must be positive"));
        }
        Ok(())
    }

    /// Per-step firing probability of an input unit with unit intensity.
    pub fn rate_per_step(&self) -> f64 {
        self.max_rate * self.dt
    }
}

/// Mean head-input activation per feature over the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStatistics {
    pub mean: Vec<f64>,
}

impl InputStatistics {
    pub fn new(mean: Vec<f64>) -> Result<Self> {
        if mean.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(input("input intensities must be finite and nonnegative"));
        }
        Ok(Self { mean })
    }
}

/// Scale applied to the spike input of each plastic layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScales {
    pub alpha: Vec<f64>,
    /// Plastic layers whose observed maximum was not positive and got [`SCALE_FLOOR`].
    #[serde(default)]
    pub floored: Vec<usize>,
}

/// Membrane voltages per plastic layer and spikes per layer, input layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeState {
    pub voltages: Vec<Vec<f64>>,
    pub spikes: Vec<Vec<bool>>,
}

impl SpikeState {
    pub fn new(net: &DenseNetwork) -> Self {
        let head = net.head();
        let mut spikes = Vec::with_capacity(head.len() + 1);
        spikes.push(vec![false; net.head_input_dim()]);
        spikes.extend(head.iter().map(|l| vec![false; l.out_dim()]));
        Self {
            voltages: head.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
            spikes,
        }
    }

    pub fn input_spikes_mut(&mut self) -> &mut [bool] {
        &mut self.spikes[0]
    }
}

fn check_data(net: &DenseNetwork, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(config("sleep statistics need at least one sample"));
    }
    if data.feature_dim() != net.feature_dim() {
        return Err(Error::Shape {
            what: "sleep data features",
            expected: net.feature_dim(),
            got: data.feature_dim(),
        });
    }
    Ok(())
}

/// Mean of the backbone output (head input) over `data`.
pub fn compute_input_statistics(net: &DenseNetwork, data: &LabeledDataset) -> Result<InputStatistics> {
    Ok(prepare(net, data)?.0)
}

/// Largest activation entering each plastic layer, over all samples and units.
pub fn compute_layer_scales(net: &DenseNetwork, data: &LabeledDataset) -> Result<LayerScales> {
    Ok(prepare(net, data)?.1)
}

/// Input statistics and layer scales from one pass over `data`.
pub fn prepare(net: &DenseNetwork, data: &LabeledDataset) -> Result<(InputStatistics, LayerScales)> {
    check_data(net, data)?;
    let hs = net.head_start();
    let plastic = net.plastic_layer_count();
    let d = net.head_input_dim();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(data.len()); d];
    let mut maxima = vec![f64::NEG_INFINITY; plastic];
    for (x, _) in data.iter() {
        let acts = net.forward(x)?;
        let head_in: &[f64] = if hs == 0 { x } else { &acts[hs - 1] };
        for (col, &v) in columns.iter_mut().zip(head_in) {
            col.push(v);
        }
        for (k, m) in maxima.iter_mut().enumerate() {
            let entering: &[f64] = if k == 0 { head_in } else { &acts[hs + k - 1] };
            for &v in entering {
                if v > *m {
                    *m = v;
                }
            }
        }
    }
    let stats = InputStatistics::new(columns.iter().map(|c| exact_mean(c)).collect())?;
    let mut floored = Vec::new();
    let alpha = maxima
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            if m > SCALE_FLOOR {
                m
            } else {
                floored.push(k);
                SCALE_FLOOR
            }
        })
        .collect();
    Ok((stats, LayerScales { alpha, floored }))
}

/// Bernoulli rate coder: unit `i` fires with probability `clamp(I_i * max_rate * dt, 0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonEncoder {
    probabilities: Vec<f64>,
}

impl PoissonEncoder {
    pub fn new(stats: &InputStatistics, cfg: &SleepConfig) -> Self {
        let r = cfg.rate_per_step();
        Self {
            probabilities: stats.mean.iter().map(|&i| (i * r).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Draws one uniform per unit, in unit order.
    pub fn encode_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [bool]) {
        for (s, &p) in out.iter_mut().zip(&self.probabilities) {
            *s = rng.random::<f64>() < p;
        }
    }
}

pub fn poisson_encode<R: Rng + ?Sized>(stats: &InputStatistics, cfg: &SleepConfig, rng: &mut R) -> Vec<bool> {
    let enc = PoissonEncoder::new(stats, cfg);
    let mut out = vec![false; stats.mean.len()];
    enc.encode_into(rng, &mut out);
    out
}

/// Advances every plastic layer by one step, in ascending order, using the
/// input spikes already stored in `state.spikes[0]`.
pub fn spiking_step(
    net: &DenseNetwork,
    state: &mut SpikeState,
    scales: &LayerScales,
    cfg: &SleepConfig,
    step: usize,
) -> Result<()> {
    let (pre_all, post_all) = state.spikes.split_at_mut(1);
    let mut pre: &mut Vec<bool> = &mut pre_all[0];
    for (k, (layer, post)) in net.head().iter().zip(post_all.iter_mut()).enumerate() {
        let alpha = scales.alpha[k];
        let beta = cfg.thresholds[k];
        let v = &mut state.voltages[k];
        let active: Vec<usize> = pre.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect();
        for (j, (vj, sj)) in v.iter_mut().zip(post.iter_mut()).enumerate() {
            let row = layer.row(j);
            let mut drive = 0.0;
            for &i in &active {
                drive += row[i];
            }
            let next = cfg.decay * *vj + alpha * drive;
            if !next.is_finite() {
                return Err(Error::SleepNumeric { layer: k, step });
            }
            if next > beta {
                *sj = true;
                *vj = 0.0;
            } else {
                *sj = false;
                *vj = next;
            }
        }
        pre = post;
    }
    Ok(())
}

/// Applies the signed Hebbian rule for the spikes in `state`.
pub fn hebbian_update(net: &mut DenseNetwork, state: &SpikeState, cfg: &SleepConfig) {
    if cfg.stdp_pos == 0.0 && cfg.stdp_neg == 0.0 {
        return;
    }
    let hs = net.head_start();
    for k in 0..net.plastic_layer_count() {
        let pre = &state.spikes[k];
        let post = &state.spikes[k + 1];
        let layer = net.layer_mut(hs + k);
        let n_in = layer.in_dim();
        let w = layer.weights_mut();
        for (j, _) in post.iter().enumerate().filter(|(_, &s)| s) {
            for (wij, &si) in w[j * n_in..(j + 1) * n_in].iter_mut().zip(pre) {
                *wij += if si { cfg.stdp_pos } else { cfg.stdp_neg };
            }
        }
    }
}

/// Spike totals of one sleep run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SleepReport {
    /// Total spikes per layer over the run, input layer first.
    pub spike_counts: Vec<u64>,
    pub steps: usize,
}

/// Runs the sleep loop on `net` in place with precomputed statistics.
pub fn sleep_prepared(
    net: &mut DenseNetwork,
    stats: &InputStatistics,
    scales: &LayerScales,
    cfg: &SleepConfig,
) -> Result<SleepReport> {
    sleep_observed(net, stats, scales, cfg, |_, _| {})
}

/// [`sleep_prepared`] calling `observe(step, state)` after each spiking step,
/// before the weight update.
pub fn sleep_observed<F: FnMut(usize, &SpikeState)>(
    net: &mut DenseNetwork,
    stats: &InputStatistics,
    scales: &LayerScales,
    cfg: &SleepConfig,
    mut observe: F,
) -> Result<SleepReport> {
    let plastic = net.plastic_layer_count();
    cfg.validate(plastic)?;
    if stats.mean.len() != net.head_input_dim() {
        return Err(Error::Shape {
            what: "input statistics",
            expected: net.head_input_dim(),
            got: stats.mean.len(),
        });
    }
    if scales.alpha.len() != plastic {
        return Err(Error::Shape {
            what: "layer scales",
            expected: plastic,
            got: scales.alpha.len(),
        });
    }
    if scales.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(config("layer scales must be positive and finite"));
    }

    let encoder = PoissonEncoder::new(stats, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SpikeState::new(net);
    let mut report = SleepReport {
        spike_counts: vec![0; plastic + 1],
        steps: cfg.steps,
    };
    for step in 0..cfg.steps {
        encoder.encode_into(&mut rng, state.input_spikes_mut());
        spiking_step(net, &mut state, scales, cfg, step)?;
        observe(step, &state);
        hebbian_update(net, &state, cfg);
        for (c, s) in report.spike_counts.iter_mut().zip(&state.spikes) {
            *c += s.iter().filter(|&&b| b).count() as u64;
        }
    }
    Ok(report)
}

/// Full sleep phase: statistics from `data`, then the spiking loop on a copy of `net`.
pub fn sleep(net: &DenseNetwork, data: &LabeledDataset, cfg: &SleepConfig) -> Result<(DenseNetwork, SleepReport)> {
    cfg.validate(net.plastic_layer_count())?;
    let (stats, scales) = prepare(net, data)?;
    let mut out = net.clone();
    let report = sleep_prepared(&mut out, &stats, &scales, cfg)?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn cfg(thresholds: Vec<f64>) -> SleepConfig {
        SleepConfig {
            steps: 10,
            dt: 0.001,
            decay: 1.0,
            max_rate: 1000.0,
            stdp_pos: 0.1,
            stdp_neg: -0.05,
            thresholds,
            seed: 1,
        }
    }

    fn single_synapse(w: f64) -> DenseNetwork {
        DenseNetwork::new(
            vec![DenseLayer::new(1, 1, vec![w], None, Activation::Identity).unwrap()],
            0,
        )
        .unwrap()
    }

    #[test]
    fn direct_threshold_crossing_fires_and_resets() {
        let net = single_synapse(2.0);
        let c = SleepConfig {
            decay: 0.0,
            ..cfg(vec![1.0])
        };
        let scales = LayerScales {
            alpha: vec![1.0],
            floored: vec![],
        };
        let mut st = SpikeState::new(&net);
        st.spikes[0][0] = true;
        spiking_step(&net, &mut st, &scales, &c, 0).unwrap();
        assert!(st.spikes[1][0]);
        assert_eq!(st.voltages[0][0], 0.0);
    }

    #[test]
    fn single_co_spike_adds_positive_increment() {
        let mut net = single_synapse(0.5);
        let mut st = SpikeState::new(&net);
        st.spikes[0][0] = true;
        st.spikes[1][0] = true;
        hebbian_update(&mut net, &st, &cfg(vec![1.0]));
        assert_eq!(net.layers()[0].weights()[0], 0.5 + 0.1);
        st.spikes[0][0] = false;
        hebbian_update(&mut net, &st, &cfg(vec![1.0]));
        assert_eq!(net.layers()[0].weights()[0], 0.5 + 0.1 - 0.05);
        // no post spike, no change
        st.spikes[1][0] = false;
        hebbian_update(&mut net, &st, &cfg(vec![1.0]));
        assert_eq!(net.layers()[0].weights()[0], 0.5 + 0.1 - 0.05);
    }

    #[test]
    fn validates_config() {
        let c = cfg(vec![1.0]);
        assert!(c.validate(1).is_ok());
        assert!(c.validate(2).is_err());
        assert!(SleepConfig { steps: 0, ..c.clone() }.validate(1).is_err());
        assert!(SleepConfig { decay: 1.5, ..c.clone() }.validate(1).is_err());
        assert!(SleepConfig { thresholds: vec![0.0], ..c.clone() }.validate(1).is_err());
        assert!(SleepConfig { thresholds: vec![f64::INFINITY], ..c }.validate(1).is_ok());
    }

    #[test]
    fn input_statistics_mean_and_scales() {
        let net = DenseNetwork::new(
            vec![DenseLayer::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], None, Activation::Identity).unwrap()],
            0,
        )
        .unwrap();
        let data = LabeledDataset::from_flat(vec![2.0, 0.0, 0.0, 2.0], vec![0, 1], 2, 2).unwrap();
        let (stats, scales) = prepare(&net, &data).unwrap();
        assert_eq!(stats.mean, vec![1.0, 1.0]);
        assert_eq!(scales.alpha, vec![2.0]);
        assert!(scales.floored.is_empty());
    }

    #[test]
    fn all_zero_activations_floor_the_scale() {
        let net = single_synapse(1.0);
        let data = LabeledDataset::from_flat(vec![0.0, 0.0], vec![0, 1], 1, 2).unwrap();
        let scales = compute_layer_scales(&net, &data).unwrap();
        assert_eq!(scales.alpha, vec![SCALE_FLOOR]);
        assert_eq!(scales.floored, vec![0]);
        let empty = LabeledDataset::from_flat(vec![], vec![], 1, 2).unwrap();
        assert!(matches!(compute_input_statistics(&net, &empty), Err(Error::Config(_))));
    }

    #[test]
    fn encoder_extremes() {
        let stats = InputStatistics::new(vec![0.0, 5.0, 1.0]).unwrap();
        let c = cfg(vec![1.0]);
        let enc = PoissonEncoder::new(&stats, &c);
        assert_eq!(enc.probabilities(), &[0.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = poisson_encode(&stats, &c, &mut rng);
            assert!(!s[0] && s[1] && s[2]);
        }
    }

    #[test]
    fn sleep_rejects_wrong_threshold_count() {
        let net = single_synapse(1.0);
        let data = LabeledDataset::from_flat(vec![1.0, 0.5], vec![0, 1], 1, 2).unwrap();
        assert!(matches!(sleep(&net, &data, &cfg(vec![1.0, 2.0])), Err(Error::Config(_))));
    }
}
