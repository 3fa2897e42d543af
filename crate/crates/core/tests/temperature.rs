mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepcal_core::temperature::{apply_temperature, fit_temperature, nll_at};
use sleepcal_core::{softmax, Temperature};

/// Labels drawn from `softmax(z)`; the returned logits are `scale * z`, so
/// the NLL-optimal temperature is `scale` up to sampling noise.
fn scaled_model(seed: u64, n: usize, c: usize, scale: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = oracle_softmax(&z);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = c - 1;
        for (k, &pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                y = k;
                break;
            }
        }
        labels.push(y);
        logits.push(z.iter().map(|v| v * scale).collect());
    }
    (logits, labels)
}

#[test]
fn doubled_logits_fit_temperature_two() {
    for seed in 0..5 {
        let (logits, labels) = scaled_model(seed, 20_000, 5, 2.0);
        let fit = fit_temperature(&logits, &labels).unwrap();
        let t = fit.temperature.value();
        assert!((t - 2.0).abs() <= 0.1, "seed {seed}: T = {t}");
        assert!(fit.converged);
    }
}

#[test]
fn matched_frequencies_fit_identity() {
    // p = 3/4 for class 0, and class 0 is the label in 3 of 4 samples
    let a = 3f64.ln();
    let logits = vec![vec![a, 0.0]; 4];
    let fit = fit_temperature(&logits, &[0, 0, 0, 1]).unwrap();
    assert!((fit.temperature.value() - 1.0).abs() <= 1e-3);
}

#[test]
fn fit_never_loses_to_identity_and_beats_a_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..100 {
        let n = rng.random_range(1..80);
        let c = rng.random_range(2..8);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let fit = fit_temperature(&logits, &labels).unwrap();
        let t = fit.temperature.value();
        assert_eq!(fit.nll, nll_at(&logits, &labels, t));
        assert_eq!(fit.baseline_nll, nll_at(&logits, &labels, 1.0));
        assert!(fit.nll <= fit.baseline_nll);
        if fit.fell_back {
            assert_eq!(t, 1.0);
        }
        let grid_min = (0..=400)
            .map(|i| nll_at(&logits, &labels, 0.05 * (400f64).powf(i as f64 / 400.0)))
            .fold(f64::INFINITY, f64::min);
        assert!(fit.nll <= grid_min + 1e-9 * (1.0 + grid_min), "{} vs grid {grid_min} at T = {t}", fit.nll);
    }
}

#[test]
fn scaled_softmax_values() {
    let z = [0.3, -1.2, 2.0];
    assert_eq!(apply_temperature(&z, Temperature::new(1.0).unwrap()).unwrap(), softmax(&z).unwrap());
    let p = apply_temperature(&[2.0, 0.0], Temperature::new(2.0).unwrap()).unwrap();
    let q = oracle_softmax(&[1.0, 0.0]);
    assert!(rel_close(p[0], q[0], 1e-12) && rel_close(p[1], q[1], 1e-12));
    let hot = apply_temperature(&[3.0, 1.0], Temperature::new(1e6).unwrap()).unwrap();
    assert!((hot[0] - 0.5).abs() < 1e-5);
    assert!(Temperature::new(0.0).is_err() && Temperature::new(f64::NAN).is_err());
}
