//! Output-directory layout, content-addressed artifact names and the CSV
//! formats exchanged between stages.
//!
//! Every artifact name carries the experiment seed and a 12-hex-digit
//! SHA-256 stamp over everything that determines its content: the stamp of
//! its upstream artifact plus the parameters of the stage that wrote it.
//! Changing a parameter therefore never overwrites a stale artifact in place.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flgpr_core::classifiers::ClassifierKind;
use flgpr_core::dataset::Channel;
use flgpr_core::evaluation::AlarmTargets;
use flgpr_core::features::FeatureKind;
use flgpr_core::geometry::Utm;
use flgpr_core::pipeline::{descriptor_kind, Algorithm, AlgorithmCv, FoldOutcome, LaneAlarms};
use flgpr_core::prescreener::{Alarm, AlarmSource};
use flgpr_core::rng::derive_seed;

use crate::config::ExperimentConfig;

pub const STAGE_DIRS: [&str; 6] = ["lanes", "alarms", "features", "models", "results", "figures"];

pub fn stamp<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Fails with the path of a missing upstream artifact.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.is_file() {
        bail!("missing artifact {} (produced by `flgpr {producer}`)", path.display());
    }
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn open(path: &Path, producer: &str) -> Result<BufReader<File>> {
    require(path, producer)?;
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// Artifact file names of one experiment.
pub struct Layout<'a> {
    pub root: PathBuf,
    pub cfg: &'a ExperimentConfig,
}

impl<'a> Layout<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { root: cfg.out_dir.clone(), cfg }
    }

    pub fn create_dirs(&self) -> Result<()> {
        for d in STAGE_DIRS {
            let p = self.root.join(d);
            std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        }
        Ok(())
    }

    fn name(&self, dir: &str, stem: &str, hash: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{stem}-s{}-{hash}.{ext}", self.cfg.seed))
    }

    /// Generator seed of lane `i`: the lane's own seed mixed into the base.
    pub fn lane_seed(&self, i: usize) -> u64 {
        derive_seed(self.cfg.seed, &[0x1A4E, self.cfg.lanes[i].seed])
    }

    pub fn lane_stamp(&self, i: usize) -> String {
        stamp(&("lane", self.lane_seed(i), &self.cfg.lanes[i]))
    }

    pub fn lane(&self, i: usize) -> PathBuf {
        self.name("lanes", &self.cfg.lanes[i].lane_id, &self.lane_stamp(i), "lane")
    }

    pub fn alarms_stamp(&self, i: usize) -> String {
        stamp(&("alarms", self.lane_stamp(i), &self.cfg.pipeline.prescreen, self.cfg.pipeline.eval.halo_m))
    }

    pub fn alarms(&self, i: usize) -> PathBuf {
        self.name("alarms", &self.cfg.lanes[i].lane_id, &self.alarms_stamp(i), "csv")
    }

    pub fn alarms_meta(&self, i: usize) -> PathBuf {
        self.alarms(i).with_extension("json")
    }

    /// Learned features share their lane's dense descriptors, so artifacts
    /// are keyed by the feature input rather than the feature.
    pub fn feature_input(feature: FeatureKind) -> String {
        match descriptor_kind(feature) {
            Some(k) => format!("desc-{}", k.name()),
            None => feature.name().to_string(),
        }
    }

    pub fn features(&self, i: usize, channel: Channel, feature: FeatureKind) -> PathBuf {
        let input = Self::feature_input(feature);
        let p = &self.cfg.pipeline;
        let params = match descriptor_kind(feature) {
            Some(_) => stamp(&p.descriptors),
            None if feature == FeatureKind::LogGabor => stamp(&p.log_gabor),
            None => String::new(),
        };
        let hash = stamp(&("features", self.alarms_stamp(i), channel, &input, params));
        self.name("features", &format!("{}-{channel}-{input}", self.cfg.lanes[i].lane_id), &hash, "bin")
    }

    /// Everything a trained model or CV result depends on.
    pub fn experiment_stamp(&self) -> String {
        let lanes: Vec<String> = (0..self.cfg.lanes.len()).map(|i| self.alarms_stamp(i)).collect();
        stamp(&("experiment", lanes, &self.cfg.pipeline))
    }

    pub fn model(&self, alg: &Algorithm, fold: usize) -> PathBuf {
        self.name("models", &format!("{}-fold{fold}", slug(alg)), &self.experiment_stamp(), "model")
    }

    pub fn predictions(&self, alg: &Algorithm) -> PathBuf {
        self.name("results", &format!("predictions-{}", slug(alg)), &self.experiment_stamp(), "csv")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.name("results", "evaluation", &self.evaluation_stamp(), "csv")
    }

    fn evaluation_stamp(&self) -> String {
        stamp(&("evaluation", self.experiment_stamp(), &self.cfg.channels, &self.cfg.features, &self.cfg.classifiers))
    }

    fn fusion_stamp(&self) -> String {
        stamp(&("fusion", self.evaluation_stamp(), &self.cfg.fusion))
    }

    pub fn fusion_steps(&self) -> PathBuf {
        self.name("results", "fusion-steps", &self.fusion_stamp(), "csv")
    }

    pub fn fusion_curve(&self) -> PathBuf {
        self.name("results", "fusion-curve", &self.fusion_stamp(), "csv")
    }

    pub fn fusion_predictions(&self) -> PathBuf {
        self.name("results", "predictions-fusion", &self.fusion_stamp(), "csv")
    }

    pub fn results(&self) -> PathBuf {
        self.name("results", "results", &self.evaluation_stamp(), "csv")
    }

    pub fn roc(&self) -> PathBuf {
        self.name("results", "roc", &self.fusion_stamp(), "csv")
    }

    pub fn figure(&self, stem: &str) -> PathBuf {
        self.name("figures", stem, &self.fusion_stamp(), "png")
    }

    pub fn confmap_dir(&self) -> PathBuf {
        let hash = stamp(&("confmap", self.experiment_stamp(), &self.cfg.confmap));
        self.root.join("figures").join(format!("confmap-s{}-{hash}", self.cfg.seed))
    }
}

/// File-name form of an algorithm label: `HH-fv-sift-plsda`.
pub fn slug(alg: &Algorithm) -> String {
    format!("{}-{}-{}", alg.channel, alg.feature, alg.classifier)
}

/// One prescreener alarm; `target` is the matched target index within the
/// lane, empty for false alarms.
#[derive(Debug, Serialize, Deserialize)]
struct AlarmRow {
    alarm: usize,
    easting: f64,
    northing: f64,
    confidence: f64,
    cluster_members: usize,
    label: String,
    target: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AlarmMeta {
    lane_id: String,
    n_targets: usize,
    area_m2: f64,
}

pub fn write_alarms(lane: &LaneAlarms, csv_path: &Path, meta_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(csv_path)?);
    for (i, (a, t)) in lane.alarms.iter().zip(&lane.targets.targets).enumerate() {
        w.serialize(AlarmRow {
            alarm: i,
            easting: a.utm.easting,
            northing: a.utm.northing,
            confidence: a.confidence,
            cluster_members: a.cluster_members,
            label: if t.is_some() { "hit" } else { "false_alarm" }.into(),
            target: *t,
        })?;
    }
    w.flush()?;
    let meta = AlarmMeta { lane_id: lane.lane_id.clone(), n_targets: lane.targets.n_targets, area_m2: lane.targets.area_m2 };
    serde_json::to_writer_pretty(create(meta_path)?, &meta)?;
    Ok(())
}

pub fn read_alarms(csv_path: &Path, meta_path: &Path) -> Result<LaneAlarms> {
    let meta: AlarmMeta = serde_json::from_reader(open(meta_path, "prescreen")?).with_context(|| format!("parsing {}", meta_path.display()))?;
    let mut r = csv::Reader::from_reader(open(csv_path, "prescreen")?);
    let mut alarms = Vec::new();
    let mut targets = Vec::new();
    for (i, row) in r.deserialize::<AlarmRow>().enumerate() {
        let row = row.with_context(|| format!("parsing {}", csv_path.display()))?;
        if row.alarm != i {
            bail!("{}: alarm rows out of order at {i}", csv_path.display());
        }
        alarms.push(Alarm { utm: Utm::new(row.easting, row.northing), confidence: row.confidence, source: AlarmSource::Prescreener, cluster_members: row.cluster_members });
        targets.push(row.target);
    }
    Ok(LaneAlarms { lane_id: meta.lane_id, alarms, targets: AlarmTargets { targets, n_targets: meta.n_targets, area_m2: meta.area_m2 } })
}

/// First-stage confidence of one alarm. `role` is `test` for the held-out
/// lane of `fold` and `crossfit` for a training lane scored by a model
/// trained on the fold's other training lanes.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub fold: usize,
    pub role: String,
    pub lane: usize,
    pub alarm: usize,
    pub confidence: f64,
}

pub fn write_predictions(cv: &AlgorithmCv, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for f in &cv.folds {
        let parts = std::iter::once(("test", f.test_lane, &f.test_confidence)).chain(f.crossfit.iter().map(|(l, c)| ("crossfit", *l, c)));
        for (role, lane, conf) in parts {
            for (alarm, &confidence) in conf.iter().enumerate() {
                w.serialize(PredictionRow { fold: f.fold, role: role.into(), lane, alarm, confidence })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the per-fold outcomes of one algorithm; per-fold pAUCs are
/// recomputed from the lane targets.
pub fn read_predictions(alg: Algorithm, path: &Path, lanes: &[LaneAlarms], far_max: f64) -> Result<AlgorithmCv> {
    let mut r = csv::Reader::from_reader(open(path, "evaluate")?);
    let folds = flgpr_core::evaluation::lane_folds(lanes.len())?;
    let mut outcomes: Vec<FoldOutcome> = folds
        .iter()
        .enumerate()
        .map(|(f, (train, test))| FoldOutcome {
            fold: f,
            test_lane: *test,
            train_lanes: train.clone(),
            test_confidence: Vec::new(),
            pauc: 0.0,
            crossfit: Vec::new(),
        })
        .collect();
    for row in r.deserialize::<PredictionRow>() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        let Some(o) = outcomes.get_mut(row.fold) else { bail!("{}: fold {} out of range", path.display(), row.fold) };
        let target = match row.role.as_str() {
            "test" if row.lane == o.test_lane => &mut o.test_confidence,
            "crossfit" if o.train_lanes.contains(&row.lane) => {
                if o.crossfit.last().map(|(l, _)| *l) != Some(row.lane) {
                    o.crossfit.push((row.lane, Vec::new()));
                }
                &mut o.crossfit.last_mut().expect("just pushed").1
            }
            _ => bail!("{}: row ({}, {}, lane {}) does not fit the lane folds", path.display(), row.fold, row.role, row.lane),
        };
        if row.alarm != target.len() {
            bail!("{}: alarm rows out of order in fold {}", path.display(), row.fold);
        }
        target.push(row.confidence);
    }
    for o in &mut outcomes {
        let expect = lanes[o.test_lane].alarms.len();
        if o.test_confidence.len() != expect {
            bail!("{}: fold {} has {} test rows for {expect} alarms", path.display(), o.fold, o.test_confidence.len());
        }
        for (l, c) in &o.crossfit {
            if c.len() != lanes[*l].alarms.len() {
                bail!("{}: fold {} lane {l} has {} crossfit rows for {} alarms", path.display(), o.fold, c.len(), lanes[*l].alarms.len());
            }
        }
        o.pauc = lanes[o.test_lane].targets.pauc(&o.test_confidence, far_max)?;
    }
    let pooled = flgpr_core::pipeline::pooled_targets(lanes, &folds);
    let conf: Vec<f64> = outcomes.iter().flat_map(|o| o.test_confidence.iter().copied()).collect();
    let pooled_pauc = pooled.pauc(&conf, far_max)?;
    Ok(AlgorithmCv { algorithm: alg, folds: outcomes, pooled_pauc, bootstrap: None })
}

/// One row of the evaluation and results tables. `fold` is the fold index
/// or `pooled` for the held-out confidences of all folds together; the CI
/// columns of a pooled row hold the bootstrap interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub fold: String,
    pub polarization: Channel,
    pub feature: FeatureKind,
    pub classifier: ClassifierKind,
    pub pauc_mean: f64,
    pub pauc_ci_lo: f64,
    pub pauc_ci_hi: f64,
}

impl ResultRow {
    pub fn algorithm(&self) -> Algorithm {
        Algorithm::new(self.polarization, self.feature, self.classifier)
    }
}

pub fn write_rows<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<S: for<'de> Deserialize<'de>>(path: &Path, producer: &str) -> Result<Vec<S>> {
    let mut r = csv::Reader::from_reader(open(path, producer)?);
    r.deserialize().collect::<std::result::Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}
