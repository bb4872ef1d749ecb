//! Persisted formats: lane containers, truth sidecars, lane features and
//! fold models survive a write/read cycle unchanged.

use std::io::Cursor;

use flgpr_core::classifiers::ClassifierKind;
use flgpr_core::dataset::{generate_lane, read_lane, truth_path, write_lane, Channel, LaneSpec};
use flgpr_core::features::FeatureKind;
use flgpr_core::pipeline::{
    lane_features, log_gabor_bank, prepare_lane, read_fold_model, read_lane_features, train_fold, write_fold_model, write_lane_features, Algorithm,
    LaneAlarms, PipelineConfig, PreparedLane,
};
use flgpr_core::Error;

fn small_lane(id: &str, seed: u64) -> flgpr_core::dataset::Lane {
    generate_lane(&LaneSpec::new(id, 24.0, 5.0, 4, seed)).unwrap()
}

#[test]
fn lane_container_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let lane = small_lane("rt", 9);
    let path = dir.path().join("rt.lane");
    write_lane(&lane, &path).unwrap();
    assert!(truth_path(&path).is_file());
    assert_eq!(read_lane(&path).unwrap(), lane);
}

#[test]
fn lane_without_targets_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let lane = generate_lane(&LaneSpec::new("empty", 12.0, 4.0, 0, 2)).unwrap();
    assert!(lane.truth.is_empty());
    let path = dir.path().join("empty.lane");
    write_lane(&lane, &path).unwrap();
    assert_eq!(read_lane(&path).unwrap(), lane);
}

#[test]
fn wrong_magic_and_truncation_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.lane");
    write_lane(&small_lane("x", 1), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();

    let bad = dir.path().join("bad.lane");
    std::fs::copy(truth_path(&path), truth_path(&bad)).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&bad, &bytes).unwrap();
    assert!(matches!(read_lane(&bad), Err(Error::Format(_))));

    bytes[0] ^= 0xFF;
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&bad, &bytes).unwrap();
    assert!(read_lane(&bad).is_err());
}

fn prepared(cfg: &PipelineConfig) -> Vec<PreparedLane<f32>> {
    (0..3).map(|i| prepare_lane(&small_lane(&format!("l{i}"), 40 + i), cfg, &[Channel::HH]).unwrap()).collect()
}

fn small_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.bov.k = 5;
    cfg.fv.gmm.k = 3;
    cfg.codebook_max_descriptors = 2000;
    cfg
}

#[test]
fn lane_features_round_trip_both_variants() {
    let cfg = small_cfg();
    let lanes = prepared(&cfg);
    let bank = log_gabor_bank(&cfg);
    for f in [FeatureKind::Lstat, FeatureKind::Sift, FeatureKind::BovRaw, FeatureKind::FvSift] {
        let feats = lane_features(&lanes[0], Channel::HH, f, &cfg, &bank).unwrap();
        let bytes = write_lane_features(&feats, Vec::new()).unwrap();
        let back = read_lane_features::<f32, _>(Cursor::new(bytes)).unwrap();
        assert_eq!(back, feats, "{f}");
    }
}

#[test]
fn fold_models_round_trip_and_predict_identically() {
    let cfg = small_cfg();
    let lanes = prepared(&cfg);
    let alarms: Vec<LaneAlarms> = lanes.iter().map(|p| p.alarms.clone()).collect();
    let bank = log_gabor_bank(&cfg);
    let cases = [(FeatureKind::Lstat, ClassifierKind::SvmRbf), (FeatureKind::BovRaw, ClassifierKind::Plsda), (FeatureKind::FvSift, ClassifierKind::SvmLinear)];
    for (f, c) in cases {
        let inputs: Vec<_> = lanes.iter().map(|p| lane_features(p, Channel::HH, f, &cfg, &bank).unwrap()).collect();
        let model = train_fold(Algorithm::new(Channel::HH, f, c), &inputs, &alarms, &[1, 2], &cfg, 4).unwrap();
        let bytes = write_fold_model(&model, Vec::new()).unwrap();
        let mut reader = Cursor::new(bytes);
        let back = read_fold_model::<f32, _>(&mut reader).unwrap();
        assert_eq!(reader.position() as usize, reader.get_ref().len(), "{f}/{c}: trailing bytes");
        assert_eq!(back.algorithm, model.algorithm);
        assert_eq!(back.train_lanes, vec![1, 2]);
        assert_eq!(back.predict(&inputs[0]).unwrap(), model.predict(&inputs[0]).unwrap(), "{f}/{c}");
    }
}

#[test]
fn corrupted_fold_model_header_is_rejected() {
    let cfg = small_cfg();
    let lanes = prepared(&cfg);
    let alarms: Vec<LaneAlarms> = lanes.iter().map(|p| p.alarms.clone()).collect();
    let bank = log_gabor_bank(&cfg);
    let inputs: Vec<_> = lanes.iter().map(|p| lane_features(p, Channel::HH, FeatureKind::Lstat, &cfg, &bank).unwrap()).collect();
    let model = train_fold(Algorithm::new(Channel::HH, FeatureKind::Lstat, ClassifierKind::Plsda), &inputs, &alarms, &[0, 1], &cfg, 4).unwrap();
    let mut bytes = write_fold_model(&model, Vec::new()).unwrap();
    // The label is the first string of the header record; overwrite it
    // with an unparseable one of the same length.
    let label = b"HH/lstat/plsda";
    let at = bytes.windows(label.len()).position(|w| w == label).unwrap();
    bytes.splice(at..at + label.len(), b"HH/lstat/svmrbf".iter().copied().take(label.len()));
    assert!(read_fold_model::<f32, _>(Cursor::new(bytes)).is_err());
}
