use std::collections::BTreeSet;

use fedsubsel::data::*;
use fedsubsel::idx::{dataset_tensors, pair, read_idx, write_idx, IdxTensor};
use proptest::prelude::*;

fn row_key(ds: &LabeledDataset, i: usize) -> Vec<u64> {
    ds.row(i).iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shards_cover_every_row_once(
        classes in 2usize..8,
        clients in 1usize..12,
        per_pick in any::<prop::sample::Index>(),
        extra in 0usize..6,
        frac in 0.2f64..0.9,
        seed in any::<u64>(),
    ) {
        let per = 1 + per_pick.index(classes);
        prop_assume!(clients * per >= classes);
        // Every holder of a class needs at least two of its rows.
        let per_class = 2 * clients * per / classes + 2 + extra;
        let ds = generate_synthetic(SyntheticSpec { classes, dims: 2, per_class, spread: 1.0 }, seed).unwrap();
        let spec = PartitionSpec { clients, classes_per_client: per, train_fraction: frac };
        let parts = shard_partition(&ds, &spec, seed.rotate_left(7)).unwrap();
        prop_assert_eq!(parts.len(), clients);

        let mut seen = BTreeSet::new();
        let mut total = 0;
        for p in &parts {
            let labels: BTreeSet<usize> = p.train.labels().iter().chain(p.test.labels()).copied().collect();
            prop_assert_eq!(labels.len(), per);
            prop_assert_eq!(p.train.label_set(), p.test.label_set());
            for part in [&p.train, &p.test] {
                for i in 0..part.len() {
                    seen.insert((part.label(i), row_key(part, i)));
                    total += 1;
                }
            }
        }
        prop_assert_eq!(total, ds.len());
        prop_assert_eq!(seen.len(), ds.len());
    }
}

#[test]
fn partition_is_deterministic_per_seed() {
    let ds = generate_synthetic(SyntheticSpec { classes: 5, dims: 3, per_class: 30, spread: 2.0 }, 1).unwrap();
    let spec = PartitionSpec { clients: 6, classes_per_client: 2, train_fraction: 0.8 };
    assert_eq!(shard_partition(&ds, &spec, 4).unwrap(), shard_partition(&ds, &spec, 4).unwrap());
    assert_ne!(shard_partition(&ds, &spec, 4).unwrap(), shard_partition(&ds, &spec, 5).unwrap());
}

#[test]
fn too_few_holders_is_infeasible() {
    let ds = generate_synthetic(SyntheticSpec { classes: 10, dims: 2, per_class: 10, spread: 1.0 }, 1).unwrap();
    let spec = PartitionSpec { clients: 3, classes_per_client: 2, train_fraction: 0.8 };
    assert!(matches!(shard_partition(&ds, &spec, 0), Err(fedsubsel::Error::Infeasible(_))));
}

#[test]
fn synthetic_data_through_idx_files_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(SyntheticSpec { classes: 3, dims: 4, per_class: 7, spread: 2.5 }, 42).unwrap();
    let (images, labels) = dataset_tensors(&ds).unwrap();
    let (ip, lp) = (dir.path().join("images.idx"), dir.path().join("labels.idx"));
    write_idx(&ip, &images).unwrap();
    write_idx(&lp, &labels).unwrap();
    let back = pair(&read_idx(&ip).unwrap(), &read_idx(&lp).unwrap(), Some(3)).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn image_count_field_matches_examples() {
    let ds = generate_synthetic(SyntheticSpec { classes: 2, dims: 2, per_class: 2, spread: 1.0 }, 0).unwrap();
    let (images, _) = dataset_tensors(&ds).unwrap();
    let bytes = fedsubsel::idx::encode_idx(&images).unwrap();
    assert_eq!(u32::from_be_bytes(bytes[4..8].try_into().unwrap()), 4);
    assert_eq!(images.count(), 4);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_idx("/nonexistent/dir/file.idx").unwrap_err();
    assert!(matches!(err, fedsubsel::Error::Io(_)));
}

#[test]
fn u8_images_pair_with_labels() {
    let img = IdxTensor::Images { count: 3, rows: 2, cols: 2, pixels: (0..12).map(|v| v * 20).collect() };
    let ds = pair(&img, &IdxTensor::Labels(vec![0, 2, 1]), None).unwrap();
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.classes(), 3);
    assert_eq!(ds.row(2)[3], 220.0 / 255.0);
}
