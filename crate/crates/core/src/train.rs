//! Mini-batch SGD with momentum, L2 and step learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::loss::{softmax_scaled, LossKind};
use crate::math;
use crate::nn::DenseNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    /// Zero disables decay.
    pub lr_decay_every: usize,
    /// Only layers from `head_start` on receive updates.
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            l2: 0.001,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            lr_decay: 0.9,
            lr_decay_every: 50,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(config("l2 must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(config("learning-rate decay factor must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.learning_rate;
        }
        let k = (epoch / self.lr_decay_every) as i32;
        self.learning_rate * libm::pow(self.lr_decay, f64::from(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch, measured before each batch update.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Per-layer parameter gradients, indexed like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            weights: net.layers().iter().map(|l| vec![0.0; l.weights().len()]).collect(),
            bias: net
                .layers()
                .iter()
                .map(|l| l.bias().map(|b| vec![0.0; b.len()]))
                .collect(),
        }
    }

    fn clear(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in self.bias.iter_mut().flatten() {
            b.fill(0.0);
        }
    }
}

/// Adds the gradient of one sample's loss into `grads` for layers `first..`.
/// Returns the loss and whether the sample was classified correctly.
pub fn accumulate_sample_gradient(
    net: &DenseNetwork,
    x: &[f64],
    y: usize,
    loss: &LossKind,
    first: usize,
    grads: &mut Gradients,
) -> Result<(f64, bool)> {
    let trace = net.forward_trace(x)?;
    let logits = trace.post.last().expect("network has layers");
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let p = softmax_scaled(logits, 1.0);
    let value = loss.value(&p, y);
    let correct = math::argmax(logits) == y;

    let mut delta = vec![0.0; p.len()];
    loss.logit_gradient(&p, y, &mut delta);

    let layers = net.layers();
    for l in (first..layers.len()).rev() {
        let layer = &layers[l];
        let input: &[f64] = if l == 0 { x } else { &trace.post[l - 1] };
        let gw = &mut grads.weights[l];
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[j * layer.in_dim()..(j + 1) * layer.in_dim()];
            for (g, &a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if let Some(gb) = &mut grads.bias[l] {
            for (g, &d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
        }
        if l > first {
            let prev_act = layers[l - 1].activation();
            let prev_pre = &trace.pre[l - 1];
            let mut next = vec![0.0; layer.in_dim()];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(layer.row(j)) {
                    *n += w * d;
                }
            }
            for (n, &z) in next.iter_mut().zip(prev_pre) {
                *n *= prev_act.derivative(z);
            }
            delta = next;
        }
    }
    Ok((value, correct))
}

/// Trains `net` in place. Deterministic for a fixed `cfg.seed`.
pub fn train_sgd(
    net: &mut DenseNetwork,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    loss: &LossKind,
) -> Result<TrainHistory> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(config("training data is empty"));
    }
    if data.feature_dim() != net.feature_dim() {
        return Err(Error::Shape {
            what: "training features",
            expected: net.feature_dim(),
            got: data.feature_dim(),
        });
    }
    if data.class_count() != net.class_count() {
        return Err(Error::Shape {
            what: "class count",
            expected: net.class_count(),
            got: data.class_count(),
        });
    }

    let first = if cfg.freeze_backbone { net.head_start() } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(net);
    let mut velocity = Gradients::zeros_like(net);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let (v, ok) = accumulate_sample_gradient(net, data.x(i), data.y(i), loss, first, &mut grads)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::Diverged { epoch },
                        other => other,
                    })?;
                loss_sum += v;
                correct += usize::from(ok);
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if lr != 0.0 {
                apply_step(net, &grads, &mut velocity, first, batch.len(), lr, cfg);
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss: mean_loss,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(history)
}

fn apply_step(
    net: &mut DenseNetwork,
    grads: &Gradients,
    velocity: &mut Gradients,
    first: usize,
    batch_len: usize,
    lr: f64,
    cfg: &TrainConfig,
) {
    let scale = 1.0 / batch_len as f64;
    for l in first..net.layer_count() {
        let layer = net.layer_mut(l);
        for ((w, &g), v) in layer
            .weights_mut()
            .iter_mut()
            .zip(&grads.weights[l])
            .zip(&mut velocity.weights[l])
        {
            let step = g * scale + cfg.l2 * *w;
            *v = cfg.momentum * *v + step;
            *w -= lr * *v;
        }
        if let (Some(b), Some(gb), Some(vb)) =
            (layer.bias_mut(), &grads.bias[l], &mut velocity.bias[l])
        {
            for ((w, &g), v) in b.iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = cfg.momentum * *v + g * scale;
                *w -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data() -> LabeledDataset {
        LabeledDataset::from_flat(vec![1.0, 0.5, -1.0, 0.2, 0.3, -0.7], vec![0, 1, 1], 2, 2).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut net = DenseNetwork::seeded(&[2, 4, 2], 0, true, 1).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        train_sgd(&mut net, &tiny_data(), &cfg, &LossKind::CrossEntropy).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn frozen_backbone_is_untouched() {
        let mut net = DenseNetwork::seeded(&[2, 4, 3, 2], 1, true, 2).unwrap();
        let fp = net.backbone_fingerprint();
        let head = net.head_fingerprint();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 5,
            freeze_backbone: true,
            ..TrainConfig::default()
        };
        train_sgd(&mut net, &tiny_data(), &cfg, &LossKind::CrossEntropy).unwrap();
        assert_eq!(net.backbone_fingerprint(), fp);
        assert_ne!(net.head_fingerprint(), head);
    }

    #[test]
    fn divergence_names_epoch() {
        let mut net = DenseNetwork::seeded(&[2, 4, 2], 0, true, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            l2: 1.0,
            batch_size: 1,
            epochs: 10,
            ..TrainConfig::default()
        };
        let err = train_sgd(&mut net, &tiny_data(), &cfg, &LossKind::CrossEntropy).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut net = DenseNetwork::seeded(&[2, 2], 0, true, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train_sgd(&mut net, &tiny_data(), &cfg, &LossKind::CrossEntropy).is_err());
        let cfg = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_decay: 0.9,
            lr_decay_every: 50,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(49), 1.0);
        assert_eq!(cfg.learning_rate_at(50), 0.9);
        assert!((cfg.learning_rate_at(100) - 0.81).abs() < 1e-15);
    }
}
