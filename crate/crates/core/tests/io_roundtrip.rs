use fedgan::gan::{Batch, GanModel, Label};
use fedgan::io::{
    load_checkpoint, load_feature_csv, parse_config, save_checkpoint, serialize_config,
    write_feature_csv, Checkpoint, FeatureDataset,
};
use fedgan::sim::SimConfig;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(
        rows in prop::collection::vec((prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), any::<bool>()), 1..20)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let (samples, labels): (Vec<Vec<f64>>, Vec<Label>) = rows
            .into_iter()
            .map(|(x, m)| (x, if m { Label::Malicious } else { Label::Genuine }))
            .unzip();
        let ds = FeatureDataset {
            feature_names: vec!["f0".into(), "f1".into(), "f2".into()],
            label_column: "label".into(),
            batch: Batch::labelled(samples, labels).unwrap(),
        };
        write_feature_csv(&path, &ds).unwrap();
        let back = load_feature_csv(&path, Some(3)).unwrap();
        let bits = |b: &Batch| b.samples().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.batch), bits(&ds.batch));
        prop_assert_eq!(back.batch.labels(), ds.batch.labels());
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), round in any::<u64>(), dim in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint { round, config_digest: [7; 32], model: GanModel::init_default(dim, seed).unwrap() };
        save_checkpoint(&path, &ck).unwrap();
        prop_assert_eq!(load_checkpoint(&path, None).unwrap(), ck);
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let mut c = SimConfig::default();
    c.clusters[1].join_schedule = Some(vec![0, 10, 20, 30, 40]);
    c.clusters[0].attacks[0].targets = Some(vec![1, 3]);
    std::fs::write(&path, serialize_config(&c)).unwrap();
    assert_eq!(parse_config(&path).unwrap(), c);
}

#[test]
fn shipped_scenario_parses() {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml");
    assert_eq!(parse_config(&path).unwrap(), SimConfig::default());
}

#[test]
fn truncated_checkpoint_on_disk_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint {
        round: 1,
        config_digest: [0; 32],
        model: GanModel::init_default(2, 0).unwrap(),
    };
    save_checkpoint(&path, &ck).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path, None).is_err());
}
