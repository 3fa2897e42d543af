use proptest::prelude::*;
use sleepcal::dataset_io::{export_csv, ingest_csv, ingest_idx, write_idx};
use sleepcal::{model_io, Error};
use sleepcal_core::data::generate_synthetic;
use sleepcal_core::nn::DenseNetwork;
use sleepcal_core::SyntheticParams;

#[test]
fn csv_fixture_reads_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.csv");
    std::fs::write(&path, "f0,f1,f2,label\n0.5,-1.25,3,0\n1e-3,2,0.1,2\n-0,7.75,-8,1\n").unwrap();
    let d = ingest_csv(&path, None).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.feature_dim(), 3);
    assert_eq!(d.class_count(), 3);
    assert_eq!(d.x(0), &[0.5, -1.25, 3.0]);
    assert_eq!(d.x(1), &[0.001, 2.0, 0.1]);
    assert_eq!(d.x(2), &[0.0, 7.75, -8.0]);
    assert_eq!(d.labels(), &[0, 2, 1]);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "1,2,0\n3,oops,1\n").unwrap();
    match ingest_csv(&path, None) {
        Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(&path, "1,2,0\n3,1\n").unwrap();
    assert!(matches!(ingest_csv(&path, None), Err(Error::Csv { line: 2, .. })));
}

#[test]
fn idx_fixture_scales_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    write_idx(&images, &[2, 2, 2], &[0, 255, 51, 102, 17, 0, 255, 204]).unwrap();
    write_idx(&labels, &[2], &[1, 0]).unwrap();
    let d = ingest_idx(&images, &labels, None).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.feature_dim(), 4);
    assert_eq!(d.x(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(d.x(1), &[17.0 / 255.0, 0.0, 1.0, 0.8]);
    assert_eq!(d.labels(), &[1, 0]);
    assert!(d.iter().all(|(x, _)| x.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn truncated_idx_reports_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    write_idx(&images, &[2, 2, 2], &[0; 7]).unwrap();
    write_idx(&labels, &[2], &[1, 0]).unwrap();
    assert!(matches!(ingest_idx(&images, &labels, None), Err(Error::Idx { offset: 16, .. })));
    std::fs::write(&images, [0u8, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap();
    assert!(matches!(ingest_idx(&images, &labels, None), Err(Error::Idx { offset: 2, .. })));
}

#[test]
fn export_then_ingest_gives_back_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round.csv");
    for seed in 0..5 {
        let p = SyntheticParams {
            classes: 4,
            dim: 6,
            samples_per_class: 50,
            ..SyntheticParams::default()
        };
        let data = generate_synthetic(&p, seed).unwrap();
        export_csv(&data, &path).unwrap();
        assert_eq!(ingest_csv(&path, Some(4)).unwrap(), data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn model_files_round_trip_bit_for_bit(
        widths in proptest::collection::vec(1usize..9, 2..5),
        head in 0usize..4,
        bias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let head = head.min(widths.len() - 2);
        let net = DenseNetwork::seeded(&widths, head, bias, seed).unwrap();
        let text = model_io::to_json(&net);
        let back = model_io::from_json(&text).unwrap();
        prop_assert_eq!(back.head_start(), net.head_start());
        for (a, b) in back.layers().iter().zip(net.layers()) {
            let bits = |xs: &[f64]| xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.weights()), bits(b.weights()));
            prop_assert_eq!(a.bias().map(bits), b.bias().map(bits));
            prop_assert_eq!(a.activation(), b.activation());
        }
        prop_assert_eq!(model_io::to_json(&back), text);
    }
}

#[test]
fn saved_models_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = DenseNetwork::seeded(&[3, 5, 2], 1, true, 7).unwrap();
    model_io::save(&net, &path).unwrap();
    let back = model_io::load(&path).unwrap();
    let x = [0.25, -1.0, 2.0];
    assert_eq!(back.logits(&x).unwrap(), net.logits(&x).unwrap());
}
