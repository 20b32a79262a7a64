use std::fs;
use std::path::{Path, PathBuf};

use hlgt::data::{
    decode_features, downsample_indices, encode_features, load_manifest, nearest_centroid_baseline,
    read_features, split_train_val, synth_generate, write_dataset, write_features, SynthConfig,
};
use hlgt::head::iou_1d;
use hlgt::tensor::Tensor;
use hlgt::HlgtError;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn fixtures_produce_distinct_errors() {
    let t = read_features(&fixture("valid_2x3.hlgt")).unwrap();
    assert_eq!(t.to_rows(), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);

    match read_features(&fixture("bad_magic.hlgt")) {
        Err(HlgtError::BadMagic { found, .. }) => assert_eq!(&found, b"HLGX"),
        other => panic!("{other:?}"),
    }
    match read_features(&fixture("bad_version.hlgt")) {
        Err(HlgtError::VersionMismatch {
            found: 7,
            expected: 1,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    match read_features(&fixture("truncated_payload.hlgt")) {
        Err(
            e @ HlgtError::Truncated {
                expected: 38,
                actual: 33,
                ..
            },
        ) => {
            let msg = e.to_string();
            assert!(msg.contains("38") && msg.contains("33"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    for (name, actual) in [("truncated_header.hlgt", 9), ("empty.hlgt", 0)] {
        match read_features(&fixture(name)) {
            Err(HlgtError::Truncated {
                expected: 14,
                actual: a,
                ..
            }) => assert_eq!(a, actual),
            other => panic!("{name}: {other:?}"),
        }
    }
    match read_features(&fixture("trailing_bytes.hlgt")) {
        Err(HlgtError::Truncated {
            expected: 38,
            actual: 40,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    match read_features(&fixture("missing.hlgt")) {
        Err(HlgtError::Io { .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn write_rejects_non_finite_values() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(1, 2, vec![1.0f32, f32::NAN]).unwrap();
    assert!(matches!(
        write_features(&t, &dir.path().join("x.hlgt")),
        Err(HlgtError::NonFiniteInput(_))
    ));
}

#[test]
fn dataset_round_trips_through_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        samples: 6,
        ..SynthConfig::default()
    };
    let records = synth_generate(&cfg).unwrap();
    let manifest = write_dataset(dir.path(), &records).unwrap();
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 6);
    assert_eq!(load_manifest(&manifest).unwrap(), records);
}

#[test]
fn manifest_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth_generate(&SynthConfig {
        samples: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let manifest = write_dataset(dir.path(), &records).unwrap();
    let text = fs::read_to_string(&manifest).unwrap();

    fs::write(&manifest, format!("{}{{not json\n", text)).unwrap();
    match load_manifest(&manifest) {
        Err(HlgtError::Manifest { line: 3, .. }) => {}
        other => panic!("{other:?}"),
    }

    fs::remove_file(dir.path().join("features/s00001_query.hlgt")).unwrap();
    match load_manifest(&manifest) {
        Err(HlgtError::MissingFeatures { id, .. }) => assert_eq!(id, "s00001"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn clean_synthetic_data_is_solved_by_the_centroid_baseline() {
    let mean_iou = |noise_std: f64| {
        let cfg = SynthConfig {
            samples: 40,
            noise_std,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        data.iter()
            .map(|s| {
                iou_1d(
                    nearest_centroid_baseline(s, cfg.signal_strength),
                    s.gt.bounds,
                )
            })
            .sum::<f64>()
            / data.len() as f64
    };
    let scores: Vec<f64> = [0.0, 0.5, 1.5, 3.0].iter().map(|&n| mean_iou(n)).collect();
    assert_eq!(scores[0], 1.0);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert!(scores[1] > 0.9, "{scores:?}");
}

#[test]
fn invalid_synth_ranges_are_config_errors() {
    for cfg in [
        SynthConfig {
            min_fraction: 0.6,
            max_fraction: 0.5,
            ..SynthConfig::default()
        },
        SynthConfig {
            max_fraction: 1.5,
            ..SynthConfig::default()
        },
        SynthConfig {
            frames: 4,
            min_fraction: 0.3,
            max_fraction: 0.4,
            ..SynthConfig::default()
        },
        SynthConfig {
            phrases: 9,
            ..SynthConfig::default()
        },
    ] {
        let err = synth_generate(&cfg).unwrap_err();
        assert!(
            matches!(err, HlgtError::Config(_)) && err.is_validation(),
            "{err:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn features_round_trip_bitwise(rows in 1usize..8, cols in 1usize..8, bits in prop::collection::vec(any::<u32>(), 64)) {
        let data: Vec<f32> = (0..rows * cols).map(|i| f32::from_bits(bits[i])).collect();
        let t = Tensor::new(rows, cols, data).unwrap();
        let bytes = encode_features(&t);
        let (back, used) = decode_features(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn downsampling_keeps_order_and_ends(len in 1usize..2000, target in 1usize..600) {
        let idx = downsample_indices(len, target);
        prop_assert_eq!(idx.len(), len.min(target));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(idx[0], 0);
        if target > 1 || len == 1 {
            prop_assert_eq!(*idx.last().unwrap(), len - 1);
        }
    }

    #[test]
    fn split_is_a_partition(len in 2usize..300, frac in 0.1f64..0.95, seed in 0u64..100) {
        let (tr, va) = split_train_val(len, frac, seed);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(split_train_val(len, frac, seed), (tr, va));
    }
}
