//! Reference implementations used as test oracles. Written for clarity, not
//! speed, and without calling into the library code they check.

#![allow(dead_code)]

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepcal_core::nn::{Activation, DenseNetwork};

pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact sum of the inputs, then a single rounding.
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut acc = BigRational::zero();
    for &x in xs {
        acc += rational(x);
    }
    acc.to_f64().expect("representable")
}

pub fn exact_mean(xs: &[f64]) -> f64 {
    let mut acc = BigRational::zero();
    for &x in xs {
        acc += rational(x);
    }
    (acc / BigRational::from_integer(BigInt::from(xs.len()))).to_f64().unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Top-1 class (first index among equal maxima) and its probability.
pub fn top1(row: &[f64]) -> (usize, f64) {
    let mut k = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[k] {
            k = i;
        }
    }
    (k, row[k])
}

/// Bin `b` (1-based) of `m` holds confidences in `((b-1)/m, b/m]`, edges taken
/// as the doubles `b as f64 / m as f64`; zero goes to the first bin.
pub fn oracle_bin(c: f64, m: usize) -> usize {
    for b in 1..=m {
        if c <= b as f64 / m as f64 {
            return b - 1;
        }
    }
    m - 1
}

pub struct OracleMetrics {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub entropy: f64,
}

/// Brute-force metrics: every sum is taken exactly over rationals.
pub fn oracle_metrics(rows: &[Vec<f64>], labels: &[usize], m: usize) -> OracleMetrics {
    let n = rows.len();
    let nq = BigRational::from_integer(BigInt::from(n));
    let mut correct = 0usize;
    let mut bin_count = vec![0usize; m];
    let mut bin_correct = vec![0usize; m];
    let mut bin_conf = vec![BigRational::zero(); m];
    let mut nll_terms = Vec::new();
    let mut brier_terms = Vec::new();
    let mut ent_terms = Vec::new();
    for (row, &y) in rows.iter().zip(labels) {
        let (k, c) = top1(row);
        let ok = k == y;
        correct += usize::from(ok);
        let b = oracle_bin(c, m);
        bin_count[b] += 1;
        bin_correct[b] += usize::from(ok);
        bin_conf[b] += rational(c);

        nll_terms.push(-row[y].max(1e-12).ln());
        let mut sq = 0.0;
        for (i, &p) in row.iter().enumerate() {
            let d = p - if i == y { 1.0 } else { 0.0 };
            sq += d * d;
        }
        brier_terms.push(sq);
        let mut h = 0.0;
        for &p in row {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        ent_terms.push(h);
    }
    // ECE = sum_b |correct_b - sum conf_b| / n, exactly.
    let mut ece = BigRational::zero();
    for b in 0..m {
        let gap = BigRational::from_integer(BigInt::from(bin_correct[b])) - bin_conf[b].clone();
        ece += if gap < BigRational::zero() { -gap } else { gap };
    }
    OracleMetrics {
        accuracy: correct as f64 / n as f64,
        ece: (ece / nq).to_f64().unwrap(),
        nll: exact_mean(&nll_terms),
        brier: exact_mean(&brier_terms),
        entropy: exact_mean(&ent_terms),
    }
}

/// Softmax through `p_k = 1 / sum_j exp(z_j - z_k)`.
pub fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|&zk| 1.0 / z.iter().map(|&zj| (zj - zk).exp()).sum::<f64>())
        .collect()
}

/// Plain nested-loop dense layer: `W` is `[out][in]`.
pub fn naive_layer(w: &[Vec<f64>], b: Option<&[f64]>, relu: bool, x: &[f64]) -> Vec<f64> {
    w.iter()
        .enumerate()
        .map(|(j, row)| {
            let mut s = b.map_or(0.0, |b| b[j]);
            for i in 0..x.len() {
                s += row[i] * x[i];
            }
            if relu && s < 0.0 {
                0.0
            } else {
                s
            }
        })
        .collect()
}

/// Weights of a head as `[layer][post][pre]`.
pub type NaiveWeights = Vec<Vec<Vec<f64>>>;

pub struct NaiveSleep<'a> {
    pub mean_input: &'a [f64],
    pub alpha: &'a [f64],
    pub thresholds: &'a [f64],
    pub steps: usize,
    pub dt: f64,
    pub decay: f64,
    pub max_rate: f64,
    pub inc: f64,
    pub dec: f64,
    pub seed: u64,
}

/// Per-synapse transcription of the sleep loop: Bernoulli input spikes, leaky
/// integrate-and-fire with reset to zero, then the Hebbian rule where `dec`
/// is added (it is stored negative) for a spiking post unit whose pre unit was
/// silent. Returns the voltages and spikes seen after each step's spiking
/// pass, before that step's weight update.
pub fn naive_sleep(w: &mut NaiveWeights, p: &NaiveSleep<'_>) -> Vec<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let mut trace = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut v: Vec<Vec<f64>> = w.iter().map(|l| vec![0.0; l.len()]).collect();
    for _ in 0..p.steps {
        let mut spikes: Vec<Vec<bool>> = Vec::new();
        let mut input = Vec::new();
        let rate = p.max_rate * p.dt;
        for &i in p.mean_input {
            let prob = (i * rate).clamp(0.0, 1.0);
            let u: f64 = rng.random();
            input.push(u < prob);
        }
        spikes.push(input);
        for l in 0..w.len() {
            let mut out = Vec::new();
            for j in 0..w[l].len() {
                let mut drive = 0.0;
                for i in 0..w[l][j].len() {
                    if spikes[l][i] {
                        drive += w[l][j][i];
                    }
                }
                v[l][j] = p.decay * v[l][j] + p.alpha[l] * drive;
                if v[l][j] > p.thresholds[l] {
                    v[l][j] = 0.0;
                    out.push(true);
                } else {
                    out.push(false);
                }
            }
            spikes.push(out);
        }
        trace.push((v.clone(), spikes.clone()));
        if p.inc == 0.0 && p.dec == 0.0 {
            continue;
        }
        for l in 0..w.len() {
            for j in 0..w[l].len() {
                if !spikes[l + 1][j] {
                    continue;
                }
                for i in 0..w[l][j].len() {
                    if spikes[l][i] {
                        w[l][j][i] += p.inc;
                    } else {
                        w[l][j][i] += p.dec;
                    }
                }
            }
        }
    }
    trace
}

/// Random logits with a spread of scales, occasional exact ties and rows
/// whose top probability lands on a bin edge.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let kind = rng.random_range(0..10);
            if kind == 0 {
                vec![1.0 / c as f64; c]
            } else if kind == 1 && c >= 2 {
                // top probability exactly 1/2, 3/4 or 1
                let top = [0.5, 0.75, 1.0][rng.random_range(0..3)];
                let mut row = vec![0.0; c];
                let k = rng.random_range(0..c);
                row[k] = top;
                let rest = 1.0 - top;
                let other = (k + 1) % c;
                row[other] += rest;
                row
            } else {
                let scale = [0.1, 1.0, 5.0, 30.0][rng.random_range(0..4)];
                let z: Vec<f64> = (0..c).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
                oracle_softmax(&z)
            }
        })
        .collect()
}

/// Layers as `(W[out][in], bias, relu)`.
pub type NaiveNet = Vec<(Vec<Vec<f64>>, Option<Vec<f64>>, bool)>;

pub fn to_naive(net: &DenseNetwork) -> NaiveNet {
    net.layers()
        .iter()
        .map(|l| {
            let w = (0..l.out_dim()).map(|j| l.row(j).to_vec()).collect();
            (w, l.bias().map(<[f64]>::to_vec), l.activation() == Activation::Relu)
        })
        .collect()
}

/// Every layer's pre-activation for input `x`.
pub fn naive_pre_activations(net: &NaiveNet, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut h = x.to_vec();
    for (w, b, relu) in net {
        let z = naive_layer(w, b.as_deref(), false, &h);
        h = if *relu { z.iter().map(|&v| v.max(0.0)).collect() } else { z.clone() };
        out.push(z);
    }
    out
}

pub fn naive_logits(net: &NaiveNet, x: &[f64]) -> Vec<f64> {
    naive_pre_activations(net, x).pop().unwrap()
}

/// The head's weights as `[layer][post][pre]`.
pub fn head_weights(net: &DenseNetwork) -> NaiveWeights {
    to_naive(net)[net.head_start()..].iter().map(|(w, _, _)| w.clone()).collect()
}

pub enum OracleLoss {
    CrossEntropy,
    Smoothed(f64),
    Focal(f64, f64),
}

/// Loss from logits: cross entropy against the one-hot label, against the
/// smoothed target `1 - eps` / `eps / (C - 1)`, or `-a (1 - p_y)^g ln p_y`.
pub fn oracle_loss(z: &[f64], y: usize, loss: &OracleLoss) -> f64 {
    let p = oracle_softmax(z);
    match *loss {
        OracleLoss::CrossEntropy => -p[y].ln(),
        OracleLoss::Smoothed(eps) => {
            let off = eps / (p.len() - 1) as f64;
            -(0..p.len())
                .map(|c| if c == y { 1.0 - eps } else { off } * p[c].ln())
                .sum::<f64>()
        }
        OracleLoss::Focal(a, g) => -a * (1.0 - p[y]).powf(g) * p[y].ln(),
    }
}

/// Plain batch gradient descent on multinomial logistic regression, used to
/// confirm that a dataset is linearly separable in practice.
pub fn logistic_regression_accuracy(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    iterations: usize,
) -> f64 {
    let d = train_x[0].len();
    let mut w = vec![vec![0.0; d + 1]; classes];
    let score = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|r| r[d] + r[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let lr = 0.5;
    for _ in 0..iterations {
        let mut g = vec![vec![0.0; d + 1]; classes];
        for (x, &y) in train_x.iter().zip(train_y) {
            let p = oracle_softmax(&score(&w, x));
            for c in 0..classes {
                let e = p[c] - if c == y { 1.0 } else { 0.0 };
                for i in 0..d {
                    g[c][i] += e * x[i];
                }
                g[c][d] += e;
            }
        }
        let n = train_x.len() as f64;
        for c in 0..classes {
            for i in 0..=d {
                w[c][i] -= lr * g[c][i] / n;
            }
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| top1(&score(&w, x)).0 == y)
        .count();
    correct as f64 / test_x.len() as f64
}
