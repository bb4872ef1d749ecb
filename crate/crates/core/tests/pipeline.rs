//! Lane-level orchestration agrees with its building blocks.

use flgpr_core::classifiers::ClassifierKind;
use flgpr_core::dataset::{generate_lane, Channel, LaneSpec};
use flgpr_core::evaluation::lane_folds;
use flgpr_core::features::FeatureKind;
use flgpr_core::pipeline::{lane_cv, lane_features, log_gabor_bank, pooled_targets, prepare_lane, train_fold, Algorithm, CvOptions, LaneAlarms, PipelineConfig};

fn setup() -> (PipelineConfig, Vec<flgpr_core::PreparedLane32>) {
    let mut cfg = PipelineConfig::default();
    cfg.bov.k = 5;
    cfg.codebook_max_descriptors = 2000;
    let lanes = (0..3).map(|i| prepare_lane(&generate_lane(&LaneSpec::new(format!("p{i}"), 30.0, 5.0, 5, 70 + i)).unwrap(), &cfg, &[Channel::HH]).unwrap()).collect();
    (cfg, lanes)
}

#[test]
fn lane_cv_test_confidences_come_from_the_fold_model() {
    let (cfg, lanes) = setup();
    let alarms: Vec<LaneAlarms> = lanes.iter().map(|p| p.alarms.clone()).collect();
    let bank = log_gabor_bank(&cfg);
    for f in [FeatureKind::Lstat, FeatureKind::BovRaw] {
        let inputs: Vec<_> = lanes.iter().map(|p| lane_features(p, Channel::HH, f, &cfg, &bank).unwrap()).collect();
        let cv = lane_cv(&alarms, &inputs, Channel::HH, f, &[ClassifierKind::Plsda, ClassifierKind::SvmLinear], &cfg, &CvOptions { n_boot: 0, crossfit: true }, 12).unwrap();
        for result in &cv {
            for (fold, (train, test)) in lane_folds(3).unwrap().iter().enumerate() {
                let outcome = &result.folds[fold];
                assert_eq!((&outcome.train_lanes, outcome.test_lane), (train, *test));
                let model = train_fold(result.algorithm, &inputs, &alarms, train, &cfg, 12).unwrap();
                assert_eq!(model.predict(&inputs[*test]).unwrap(), outcome.test_confidence, "{} fold {fold}", result.algorithm);
                // Cross-fitted training-lane scores come from the other training lane alone.
                for (lane, conf) in &outcome.crossfit {
                    let others: Vec<usize> = train.iter().copied().filter(|l| l != lane).collect();
                    let inner = train_fold(result.algorithm, &inputs, &alarms, &others, &cfg, 12).unwrap();
                    assert_eq!(&inner.predict(&inputs[*lane]).unwrap(), conf);
                }
            }
            let conf: Vec<f64> = result.folds.iter().flat_map(|o| o.test_confidence.iter().copied()).collect();
            let pooled = pooled_targets(&alarms, &lane_folds(3).unwrap()).pauc(&conf, cfg.eval.far_max).unwrap();
            assert_eq!(pooled, result.pooled_pauc);
        }
    }
}

#[test]
fn algorithm_labels_round_trip_over_the_grid() {
    let grid = Algorithm::grid(&Channel::ALL, &FeatureKind::ALL, &ClassifierKind::ALL);
    assert_eq!(grid.len(), 81);
    for a in grid {
        assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
    }
}
