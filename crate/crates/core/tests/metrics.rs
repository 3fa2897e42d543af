mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepcal_core::metrics::{self, bin_index, reliability_bins, MetricSet};
use sleepcal_core::PredictionBatch;

fn random_batch(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.random_range(1..=200);
    let c = rng.random_range(1..=20);
    let rows = random_rows(rng, n, c);
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    (rows, labels)
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..1000 {
        let (rows, labels) = random_batch(&mut rng);
        let m = rng.random_range(1..=20);
        let batch = PredictionBatch::from_rows(&rows, labels.clone()).unwrap();
        let got = MetricSet::evaluate(&batch, m).unwrap();
        let want = oracle_metrics(&rows, &labels, m);
        assert_eq!(got.accuracy, want.accuracy);
        for (name, a, b) in [
            ("ece", got.ece, want.ece),
            ("nll", got.nll, want.nll),
            ("brier", got.brier, want.brier),
            ("entropy", got.entropy, want.entropy),
        ] {
            assert!(rel_close(a, b, 1e-12) || (a - b).abs() < 1e-15, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn reliability_bins_match_filter_and_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let (rows, labels) = random_batch(&mut rng);
        let batch = PredictionBatch::from_rows(&rows, labels.clone()).unwrap();
        let bins = reliability_bins(&batch, 15).unwrap();
        assert_eq!(bins.total(), rows.len());
        for (b, bin) in bins.bins.iter().enumerate() {
            let members: Vec<(f64, bool)> = rows
                .iter()
                .zip(&labels)
                .map(|(r, &y)| {
                    let (k, c) = top1(r);
                    (c, k == y)
                })
                .filter(|&(c, _)| oracle_bin(c, 15) == b)
                .collect();
            assert_eq!(bin.count, members.len());
            assert_eq!(bin.low, b as f64 / 15.0);
            assert_eq!(bin.high, (b + 1) as f64 / 15.0);
            if members.is_empty() {
                continue;
            }
            let confs: Vec<f64> = members.iter().map(|m| m.0).collect();
            let hits = members.iter().filter(|m| m.1).count();
            assert_eq!(bin.accuracy, hits as f64 / members.len() as f64);
            assert_eq!(bin.confidence, exact_sum(&confs) / members.len() as f64);
        }
    }
}

#[test]
fn hand_evaluated_cases() {
    // (0.8, correct) and (0.6, wrong) in one bin: |0.5 - 0.7|
    let b = PredictionBatch::from_rows(&[vec![0.8, 0.2], vec![0.6, 0.4]], vec![0, 1]).unwrap();
    assert!((metrics::ece(&b, 1).unwrap() - 0.2).abs() < 1e-15);

    let sure = PredictionBatch::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], vec![0, 2]).unwrap();
    let s = MetricSet::evaluate(&sure, 10).unwrap();
    assert_eq!((s.accuracy, s.ece, s.nll, s.brier, s.entropy), (1.0, 0.0, 0.0, 0.0, 0.0));
    let bins = reliability_bins(&sure, 10).unwrap();
    assert_eq!(bins.bins[9].count, 2);

    let uniform = PredictionBatch::from_rows(&[vec![0.25; 4]], vec![3]).unwrap();
    assert!((metrics::entropy(&uniform) - 4f64.ln()).abs() < 1e-15);
    assert!((metrics::brier(&uniform) - 0.75).abs() < 1e-15);

    let e = std::f64::consts::E;
    let b = PredictionBatch::from_rows(&[vec![1.0 / e, 1.0 - 1.0 / e]], vec![0]).unwrap();
    assert!((metrics::nll(&b) - 1.0).abs() < 1e-15);
}

#[test]
fn temperature_never_moves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let c = rng.random_range(2..10);
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(-8.0..8.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let base = PredictionBatch::from_logits(&logits, labels.clone(), 1.0).unwrap();
        let t = rng.random_range(0.05..20.0);
        let scaled = PredictionBatch::from_logits(&logits, labels, t).unwrap();
        assert_eq!(base.predictions(), scaled.predictions());
        assert_eq!(metrics::accuracy(&base), metrics::accuracy(&scaled));
    }
}

proptest! {
    #[test]
    fn bin_index_agrees_with_linear_scan(c in 0.0f64..=1.0, m in 1usize..100) {
        prop_assert_eq!(bin_index(c, m), oracle_bin(c, m));
    }

    #[test]
    fn bin_edges_are_inclusive_on_the_right(k in 1usize..50, extra in 0usize..50) {
        let m = k + extra;
        let edge = k as f64 / m as f64;
        prop_assert_eq!(bin_index(edge, m), k - 1);
    }

    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), shift in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, labels) = random_batch(&mut rng);
        let n = rows.len();
        let k = shift % n;
        let rot_rows: Vec<Vec<f64>> = rows[k..].iter().chain(&rows[..k]).cloned().collect();
        let rot_labels: Vec<usize> = labels[k..].iter().chain(&labels[..k]).copied().collect();
        let a = MetricSet::evaluate(&PredictionBatch::from_rows(&rows, labels).unwrap(), 15).unwrap();
        let b = MetricSet::evaluate(&PredictionBatch::from_rows(&rot_rows, rot_labels).unwrap(), 15).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a.ece));
        prop_assert!((0.0..=2.0).contains(&a.brier));
    }
}
