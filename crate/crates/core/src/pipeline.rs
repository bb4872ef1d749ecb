//! Lane-level orchestration: prescreening and scoring, patch and feature
//! extraction, fold-local training of codebooks and classifiers, lane
//! cross-validation with bootstrap intervals, and cross-fitted inputs for
//! decision fusion.
//!
//! Everything fitted inside a fold (ZCA, dictionaries, GMMs, standardization,
//! classifiers) sees only the fold's training lanes. Fitted artifacts depend
//! on the training-lane set through their seeds, never on held-out data.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{read_classifier, write_classifier, Classifier, ClassifierKind, ClassifierParams};
use crate::dataset::{Channel, Lane};
use crate::encoders::{
    bov_encode, dense_descriptors, fv_encode, read_bov, read_fv, spherical_kmeans, write_bov, write_fv, BovDictionary, BovParams, DescriptorKind, DescriptorParams,
    DescriptorSet, FvCodebook, FvOptions, FvParams,
};
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_indices, lane_folds, AlarmTargets, EvalParams, PaucScore};
use crate::features::{extract_handcrafted, stack, FeatureKind, LogGaborBank, LogGaborParams, PatchInputs};
use crate::fusion::{fuse_predict, fusion_prefix_predictions, sfs_select, FusionModel, FusionParams, PredictionMatrix};
use crate::patch::{extract_patch, normalize_patch, ComplexPatch, NormalizedPatch, PATCH_SIZE};
use crate::prescreener::{prescreen_lane, Alarm, PrescreenParams};
use crate::record::{RecordReader, RecordWriter};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Real;

/// Stage parameters shared by every algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub prescreen: PrescreenParams,
    pub descriptors: DescriptorParams,
    pub bov: BovParams,
    pub fv: FvParams,
    pub log_gabor: LogGaborParams,
    pub classifier: ClassifierParams,
    pub eval: EvalParams,
    /// Descriptors drawn (without replacement) to fit one codebook.
    pub codebook_max_descriptors: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prescreen: PrescreenParams { min_confidence: 0.2, ..PrescreenParams::default() },
            descriptors: DescriptorParams::default(),
            bov: BovParams::default(),
            // Diagonal GMMs need decorrelated descriptors; normalized FVs
            // keep a few bursty components from dominating.
            fv: FvParams { whiten: true, options: FvOptions { power_norm: true, l2_norm: true }, ..FvParams::default() },
            log_gabor: LogGaborParams::default(),
            classifier: ClassifierParams::default(),
            eval: EvalParams::default(),
            codebook_max_descriptors: 20_000,
        }
    }
}

/// One first-stage detector: polarization × feature × classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Algorithm {
    pub channel: Channel,
    pub feature: FeatureKind,
    pub classifier: ClassifierKind,
}

impl Algorithm {
    pub fn new(channel: Channel, feature: FeatureKind, classifier: ClassifierKind) -> Self {
        Self { channel, feature, classifier }
    }

    /// Channel-major, then feature, then classifier.
    pub fn grid(channels: &[Channel], features: &[FeatureKind], classifiers: &[ClassifierKind]) -> Vec<Algorithm> {
        let mut out = Vec::new();
        for &c in channels {
            for &f in features {
                for &k in classifiers {
                    out.push(Algorithm::new(c, f, k));
                }
            }
        }
        out
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.channel, self.feature, self.classifier)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [c, f, k] => Ok(Algorithm::new(c.parse()?, f.parse()?, k.parse()?)),
            _ => Err(Error::InvalidArgument(format!("algorithm label `{s}` is not channel/feature/classifier"))),
        }
    }
}

/// Prescreener alarms of one lane with their halo labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneAlarms {
    pub lane_id: String,
    pub alarms: Vec<Alarm>,
    pub targets: AlarmTargets,
}

impl LaneAlarms {
    pub fn labels(&self) -> Vec<bool> {
        self.targets.labels()
    }
}

pub fn prescreen_and_score(lane: &Lane, cfg: &PipelineConfig) -> Result<LaneAlarms> {
    let alarms = prescreen_lane(lane, &cfg.prescreen)?;
    Ok(score_lane_alarms(lane, alarms, cfg.eval.halo_m))
}

pub fn score_lane_alarms(lane: &Lane, alarms: Vec<Alarm>, halo_m: f64) -> LaneAlarms {
    let scored = crate::evaluation::score_alarms(&alarms, &lane.truth, halo_m);
    LaneAlarms {
        lane_id: lane.spec.lane_id.clone(),
        targets: AlarmTargets::from_scored(&scored, lane.truth.len(), lane.area_m2()),
        alarms,
    }
}

/// Complex and normalized patches of every alarm in one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPatches<T> {
    pub channel: Channel,
    pub complex: Vec<ComplexPatch<T>>,
    pub normalized: Vec<NormalizedPatch<T>>,
}

pub fn channel_patches<T: Real>(lane: &Lane, alarms: &[Alarm], channel: Channel) -> Result<ChannelPatches<T>> {
    let complex: Vec<ComplexPatch<T>> = alarms.par_iter().map(|a| extract_patch(lane, &a.utm, channel)).collect::<Result<_>>()?;
    let normalized = complex.par_iter().map(normalize_patch).collect();
    Ok(ChannelPatches { channel, complex, normalized })
}

/// A lane reduced to what classification needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLane<T> {
    pub alarms: LaneAlarms,
    pub channels: Vec<ChannelPatches<T>>,
}

impl<T: Real> PreparedLane<T> {
    pub fn patches(&self, channel: Channel) -> Result<&ChannelPatches<T>> {
        self.channels.iter().find(|c| c.channel == channel).ok_or(Error::MissingChannel(channel))
    }

    pub fn len(&self) -> usize {
        self.alarms.alarms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alarms.alarms.is_empty()
    }
}

pub fn prepare_lane<T: Real>(lane: &Lane, cfg: &PipelineConfig, channels: &[Channel]) -> Result<PreparedLane<T>> {
    let alarms = prescreen_and_score(lane, cfg)?;
    prepare_alarms(lane, alarms, channels)
}

pub fn prepare_alarms<T: Real>(lane: &Lane, alarms: LaneAlarms, channels: &[Channel]) -> Result<PreparedLane<T>> {
    let channels = channels.iter().map(|&c| channel_patches(lane, &alarms.alarms, c)).collect::<Result<_>>()?;
    Ok(PreparedLane { alarms, channels })
}

/// What a feature kind needs from one lane: a finished matrix for the
/// handcrafted kinds, per-alarm descriptor sets for the learned ones.
#[derive(Debug, Clone, PartialEq)]
pub enum LaneFeatures<T> {
    Fixed(Array2<T>),
    Descriptors(Vec<DescriptorSet<T>>),
}

pub fn descriptor_kind(feature: FeatureKind) -> Option<DescriptorKind> {
    match feature {
        FeatureKind::BovRaw | FeatureKind::FvRaw => Some(DescriptorKind::Raw),
        FeatureKind::BovSift | FeatureKind::FvSift => Some(DescriptorKind::Sift),
        _ => None,
    }
}

pub fn log_gabor_bank(cfg: &PipelineConfig) -> LogGaborBank {
    LogGaborBank::new(PATCH_SIZE, PATCH_SIZE, cfg.log_gabor)
}

pub fn handcrafted_matrix<T: Real>(feature: FeatureKind, patches: &ChannelPatches<T>, bank: &LogGaborBank) -> Result<Array2<T>> {
    let rows: Vec<_> = (0..patches.complex.len())
        .into_par_iter()
        .map(|i| extract_handcrafted(feature, &PatchInputs { complex: &patches.complex[i], normalized: &patches.normalized[i] }, bank))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        let d = feature.handcrafted_dim().unwrap_or(0);
        return Ok(Array2::zeros((0, d)));
    }
    stack(&rows)
}

pub fn descriptor_sets<T: Real>(kind: DescriptorKind, patches: &ChannelPatches<T>, params: &DescriptorParams) -> Vec<DescriptorSet<T>> {
    patches.normalized.par_iter().map(|p| dense_descriptors(p.pixels.view(), kind, params)).collect()
}

pub fn lane_features<T: Real>(lane: &PreparedLane<T>, channel: Channel, feature: FeatureKind, cfg: &PipelineConfig, bank: &LogGaborBank) -> Result<LaneFeatures<T>> {
    let patches = lane.patches(channel)?;
    Ok(match descriptor_kind(feature) {
        Some(kind) => LaneFeatures::Descriptors(descriptor_sets(kind, patches, &cfg.descriptors)),
        None => LaneFeatures::Fixed(handcrafted_matrix(feature, patches, bank)?),
    })
}

/// A learned encoding model.
#[derive(Debug, Clone, PartialEq)]
pub enum Codebook<T> {
    Bov(BovDictionary<T>),
    Fv(FvCodebook<T>),
}

impl<T: Real> Codebook<T> {
    pub fn encode(&self, sets: &[DescriptorSet<T>]) -> Result<Array2<T>> {
        let rows: Vec<_> = sets
            .par_iter()
            .map(|s| {
                Ok(match self {
                    Codebook::Bov(d) => bov_encode(s, d)?.feature,
                    Codebook::Fv(b) => fv_encode(s, b)?.feature,
                })
            })
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no descriptor sets to encode".into()));
        }
        stack(&rows)
    }
}

/// Uniform subsample (without replacement, in original order) of at most
/// `cap` descriptors pooled over the given per-alarm sets.
pub fn pooled_descriptors<T: Real>(sets: &[&DescriptorSet<T>], cap: usize, seed: u64) -> Result<Array2<T>> {
    let views: Vec<_> = sets.iter().map(|s| s.descriptors.view()).collect();
    if views.is_empty() {
        return Err(Error::InvalidArgument("no descriptors to fit a codebook".into()));
    }
    let all = concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if all.nrows() <= cap {
        return Ok(all);
    }
    let mut idx = sample(&mut rng_for(seed, &[0xD5]), all.nrows(), cap).into_vec();
    idx.sort_unstable();
    Ok(all.select(Axis(0), &idx))
}

pub fn fit_codebook<T: Real>(feature: FeatureKind, sets: &[&DescriptorSet<T>], cfg: &PipelineConfig, seed: u64) -> Result<Codebook<T>> {
    let kind = descriptor_kind(feature).ok_or_else(|| Error::InvalidArgument(format!("{feature} has no codebook")))?;
    let desc = pooled_descriptors(sets, cfg.codebook_max_descriptors, seed)?;
    Ok(match feature {
        FeatureKind::BovRaw | FeatureKind::BovSift => Codebook::Bov(spherical_kmeans(desc.view(), kind, &cfg.bov, seed)?),
        _ => Codebook::Fv(crate::encoders::fv_fit(desc.view(), kind, &cfg.fv, seed)?),
    })
}

fn lane_mask(lanes: &[usize]) -> u64 {
    lanes.iter().fold(0, |m, &l| m | (1 << l))
}

/// Seed of the codebook fitted for (channel, feature) on a training-lane set.
pub fn codebook_seed(seed: u64, channel: Channel, feature: FeatureKind, train: &[usize]) -> u64 {
    let fi = FeatureKind::ALL.iter().position(|&f| f == feature).unwrap_or(0) as u64;
    derive_seed(seed, &[0xC0DE, channel.index() as u64, fi, lane_mask(train)])
}

/// Feature matrices for every lane under one training split.
#[derive(Debug, Clone)]
pub struct SplitFeatures<T> {
    pub codebook: Option<Codebook<T>>,
    pub matrices: Vec<Array2<T>>,
}

impl<T: Real> SplitFeatures<T> {
    pub fn rows(&self, lanes: &[usize]) -> Array2<T> {
        let views: Vec<_> = lanes.iter().map(|&l| self.matrices[l].view()).collect();
        concatenate(Axis(0), &views).expect("equal feature widths")
    }
}

/// Fits the split's codebook on `train` lanes only, then encodes `apply`
/// lanes (other entries are left empty).
pub fn split_features<T: Real>(inputs: &[LaneFeatures<T>], train: &[usize], apply: &[usize], channel: Channel, feature: FeatureKind, cfg: &PipelineConfig, seed: u64) -> Result<SplitFeatures<T>> {
    let codebook = if feature.is_learned() {
        let sets: Vec<&DescriptorSet<T>> = train
            .iter()
            .flat_map(|&l| match &inputs[l] {
                LaneFeatures::Descriptors(d) => d.iter().collect::<Vec<_>>(),
                LaneFeatures::Fixed(_) => Vec::new(),
            })
            .collect();
        Some(fit_codebook(feature, &sets, cfg, codebook_seed(seed, channel, feature, train))?)
    } else {
        None
    };
    let matrices = (0..inputs.len())
        .map(|l| {
            if !apply.contains(&l) {
                return Ok(Array2::zeros((0, 0)));
            }
            match (&inputs[l], &codebook) {
                (LaneFeatures::Fixed(m), _) => Ok(m.clone()),
                (LaneFeatures::Descriptors(sets), Some(cb)) => cb.encode(sets),
                (LaneFeatures::Descriptors(_), None) => Err(Error::InvalidArgument(format!("{feature} needs a codebook"))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(SplitFeatures { codebook, matrices })
}

fn labels_of(lanes: &[LaneAlarms], idx: &[usize]) -> Vec<bool> {
    idx.iter().flat_map(|&l| lanes[l].labels()).collect()
}

fn check_fold(lanes: &[LaneAlarms], fold: usize, train: &[usize], test: usize) -> Result<()> {
    let y = labels_of(lanes, train);
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(Error::EmptyFold { fold, lane: lanes[train[0]].lane_id.clone() });
    }
    if lanes[test].targets.n_targets == 0 {
        return Err(Error::EmptyFold { fold, lane: lanes[test].lane_id.clone() });
    }
    Ok(())
}

/// Everything trained for one algorithm on one training-lane set.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel<T> {
    pub algorithm: Algorithm,
    pub train_lanes: Vec<usize>,
    pub codebook: Option<Codebook<T>>,
    pub classifier: Classifier<T>,
}

impl<T: Real> FoldModel<T> {
    /// Confidences for one lane's feature inputs.
    pub fn predict(&self, input: &LaneFeatures<T>) -> Result<Vec<f64>> {
        let x = match (input, &self.codebook) {
            (LaneFeatures::Fixed(m), _) => m.clone(),
            (LaneFeatures::Descriptors(sets), Some(cb)) => cb.encode(sets)?,
            (LaneFeatures::Descriptors(_), None) => return Err(Error::InvalidArgument("descriptor input without a codebook".into())),
        };
        Ok(self.classifier.predict(x.view())?.iter().map(|v| v.f64()).collect())
    }
}

/// Trains one algorithm on `train` lanes. `inputs` must hold that
/// algorithm's lane features; only the `train` entries are read.
pub fn train_fold<T: Real>(algorithm: Algorithm, inputs: &[LaneFeatures<T>], lanes: &[LaneAlarms], train: &[usize], cfg: &PipelineConfig, seed: u64) -> Result<FoldModel<T>> {
    let feats = split_features(inputs, train, train, algorithm.channel, algorithm.feature, cfg, seed)?;
    let classifier = Classifier::fit(algorithm.classifier, feats.rows(train).view(), &labels_of(lanes, train), &cfg.classifier)?;
    Ok(FoldModel { algorithm, train_lanes: train.to_vec(), codebook: feats.codebook, classifier })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    /// Bootstrap trials of the classifier fit; 0 or 1 skips the interval.
    pub n_boot: usize,
    /// Also produce out-of-lane predictions on each fold's training lanes.
    pub crossfit: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { n_boot: 10, crossfit: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_lane: usize,
    pub train_lanes: Vec<usize>,
    pub test_confidence: Vec<f64>,
    pub pauc: f64,
    /// (lane, confidences from a model trained on the other training lanes).
    pub crossfit: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmCv {
    pub algorithm: Algorithm,
    pub folds: Vec<FoldOutcome>,
    /// pAUC of the held-out confidences pooled over all folds.
    pub pooled_pauc: f64,
    /// Bootstrap of the pooled pAUC over classifier training resamples.
    pub bootstrap: Option<PaucScore>,
}

/// Pooled targets of the test lanes in fold order.
pub fn pooled_targets(lanes: &[LaneAlarms], folds: &[(Vec<usize>, usize)]) -> AlarmTargets {
    AlarmTargets::concat(&folds.iter().map(|(_, t)| lanes[*t].targets.clone()).collect::<Vec<_>>())
}

fn classifier_index(k: ClassifierKind) -> u64 {
    ClassifierKind::ALL.iter().position(|&c| c == k).unwrap_or(0) as u64
}

/// Leave-one-lane-out evaluation of every classifier in `classifiers` on one
/// (channel, feature). Codebooks are shared by the classifiers of a split.
pub fn lane_cv<T: Real>(lanes: &[LaneAlarms], inputs: &[LaneFeatures<T>], channel: Channel, feature: FeatureKind, classifiers: &[ClassifierKind], cfg: &PipelineConfig, opts: &CvOptions, seed: u64) -> Result<Vec<AlgorithmCv>> {
    if inputs.len() != lanes.len() {
        return Err(Error::DimensionMismatch { expected: lanes.len(), got: inputs.len() });
    }
    let folds = lane_folds(lanes.len())?;
    for (f, (train, test)) in folds.iter().enumerate() {
        check_fold(lanes, f, train, *test)?;
    }
    let all: Vec<usize> = (0..lanes.len()).collect();
    let outer: Vec<SplitFeatures<T>> = folds
        .iter()
        .map(|(train, _)| split_features(inputs, train, &all, channel, feature, cfg, seed))
        .collect::<Result<_>>()?;
    // Cross-fit splits: for training lane l of a fold, the model sees the
    // fold's other training lanes.
    let inner: Vec<Vec<(usize, SplitFeatures<T>)>> = if opts.crossfit {
        folds
            .iter()
            .map(|(train, _)| {
                if train.len() < 2 {
                    return Err(Error::InvalidArgument("cross-fitting needs at least 2 training lanes per fold".into()));
                }
                train
                    .iter()
                    .map(|&l| {
                        let rest: Vec<usize> = train.iter().copied().filter(|&m| m != l).collect();
                        Ok((l, split_features(inputs, &rest, &[rest.clone(), vec![l]].concat(), channel, feature, cfg, seed)?))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    } else {
        vec![Vec::new(); folds.len()]
    };
    let pooled_truth = pooled_targets(lanes, &folds);

    classifiers
        .iter()
        .map(|&kind| {
            let algorithm = Algorithm::new(channel, feature, kind);
            let fit_predict = |feats: &SplitFeatures<T>, train: &[usize], rows: Option<&[usize]>, test: usize| -> Result<Vec<f64>> {
                let x = feats.rows(train);
                let y = labels_of(lanes, train);
                let (x, y) = match rows {
                    Some(r) => (x.select(Axis(0), r), r.iter().map(|&i| y[i]).collect()),
                    None => (x, y),
                };
                let model = Classifier::fit(kind, x.view(), &y, &cfg.classifier)?;
                Ok(model.predict(feats.matrices[test].view())?.iter().map(|v| v.f64()).collect())
            };
            let mut outcomes = Vec::with_capacity(folds.len());
            for (f, (train, test)) in folds.iter().enumerate() {
                let test_confidence = fit_predict(&outer[f], train, None, *test)?;
                let pauc = lanes[*test].targets.pauc(&test_confidence, cfg.eval.far_max)?;
                let crossfit = inner[f]
                    .iter()
                    .map(|(l, feats)| {
                        let rest: Vec<usize> = train.iter().copied().filter(|m| m != l).collect();
                        check_fold(lanes, f, &rest, *l)?;
                        Ok((*l, fit_predict(feats, &rest, None, *l)?))
                    })
                    .collect::<Result<_>>()?;
                outcomes.push(FoldOutcome { fold: f, test_lane: *test, train_lanes: train.clone(), test_confidence, pauc, crossfit });
            }
            let pooled: Vec<f64> = outcomes.iter().flat_map(|o| o.test_confidence.iter().copied()).collect();
            let pooled_pauc = pooled_truth.pauc(&pooled, cfg.eval.far_max)?;
            let bootstrap = if opts.n_boot >= 2 {
                let trials = (0..opts.n_boot)
                    .map(|b| {
                        let mut conf = Vec::with_capacity(pooled.len());
                        for (f, (train, test)) in folds.iter().enumerate() {
                            let y = labels_of(lanes, train);
                            let mut rng = rng_for(seed, &[0xB0, channel.index() as u64, feature as u64, classifier_index(kind), b as u64, f as u64]);
                            let idx = bootstrap_indices(&mut rng, &y)?;
                            conf.extend(fit_predict(&outer[f], train, Some(&idx), *test)?);
                        }
                        pooled_truth.pauc(&conf, cfg.eval.far_max)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Some(PaucScore::from_trials(trials, cfg.eval.far_max))
            } else {
                None
            };
            Ok(AlgorithmCv { algorithm, folds: outcomes, pooled_pauc, bootstrap })
        })
        .collect()
}

/// Decision fusion under the same lane folds as the first stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCv {
    pub models: Vec<FusionModel>,
    /// Fused held-out confidences pooled over folds.
    pub confidence: Vec<f64>,
    pub pooled_pauc: f64,
}

fn fold_matrices(base: &[AlgorithmCv], lanes: &[LaneAlarms], f: usize) -> Result<(PredictionMatrix, AlarmTargets, PredictionMatrix)> {
    let labels: Vec<String> = base.iter().map(|a| a.algorithm.to_string()).collect();
    let first = &base[0].folds[f];
    let train_lanes: Vec<usize> = first.crossfit.iter().map(|(l, _)| *l).collect();
    if train_lanes.is_empty() {
        return Err(Error::InvalidArgument("fusion needs cross-fitted first-stage predictions".into()));
    }
    let train_cols = base
        .iter()
        .zip(&labels)
        .map(|(a, label)| (label.clone(), a.folds[f].crossfit.iter().flat_map(|(_, c)| c.iter().copied()).collect()))
        .collect();
    let test_cols = base.iter().zip(&labels).map(|(a, label)| (label.clone(), a.folds[f].test_confidence.clone())).collect();
    let truth = AlarmTargets::concat(&train_lanes.iter().map(|&l| lanes[l].targets.clone()).collect::<Vec<_>>());
    Ok((PredictionMatrix::from_columns(train_cols)?, truth, PredictionMatrix::from_columns(test_cols)?))
}

/// SFS and second-stage PLSDA per fold on cross-fitted training-lane
/// predictions, applied to the held-out lane.
pub fn fusion_cv(base: &[AlgorithmCv], lanes: &[LaneAlarms], params: &FusionParams, seed: u64) -> Result<FusionCv> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one first-stage algorithm".into()));
    }
    let n_folds = base[0].folds.len();
    let mut models = Vec::new();
    let mut confidence = Vec::new();
    let mut parts = Vec::new();
    for f in 0..n_folds {
        let (train, truth, test) = fold_matrices(base, lanes, f)?;
        let model = sfs_select(&train, &truth, params, derive_seed(seed, &[0xF5, f as u64]))?;
        confidence.extend(fuse_predict(&model, &test)?);
        parts.push(lanes[base[0].folds[f].test_lane].targets.clone());
        models.push(model);
    }
    let pooled_pauc = AlarmTargets::concat(&parts).pauc(&confidence, params.far_max)?;
    Ok(FusionCv { models, confidence, pooled_pauc })
}

/// Pooled held-out pAUC of the fused detector for N_f = 1..=max_nf.
pub fn fusion_curve_cv(base: &[AlgorithmCv], lanes: &[LaneAlarms], params: &FusionParams, seed: u64) -> Result<Vec<f64>> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one first-stage algorithm".into()));
    }
    let n_folds = base[0].folds.len();
    let mut per_fold = Vec::new();
    let mut parts = Vec::new();
    for f in 0..n_folds {
        let (train, truth, test) = fold_matrices(base, lanes, f)?;
        let (_, preds) = fusion_prefix_predictions(&train, &truth, &test, params, derive_seed(seed, &[0xF5, f as u64]))?;
        per_fold.push(preds);
        parts.push(lanes[base[0].folds[f].test_lane].targets.clone());
    }
    let truth = AlarmTargets::concat(&parts);
    let n = per_fold.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|k| {
            let conf: Vec<f64> = per_fold.iter().flat_map(|p| p[k].iter().copied()).collect();
            truth.pauc(&conf, params.far_max)
        })
        .collect()
}


const FEATURES_KIND: &[u8; 4] = b"LFEA";
const FOLD_KIND: &[u8; 4] = b"FOLD";

/// Lane features as a record: tag 0 and one matrix for handcrafted kinds;
/// tag 1, a count, then per alarm the descriptor kind, window grid, patch
/// dims, T×2 centers and T×D descriptors.
pub fn write_lane_features<T: Real, W: Write>(features: &LaneFeatures<T>, w: W) -> Result<W> {
    let mut rec = RecordWriter::new(w, FEATURES_KIND, 1)?;
    match features {
        LaneFeatures::Fixed(m) => {
            rec.u64(0)?;
            rec.matrix(m.view())?;
        }
        LaneFeatures::Descriptors(sets) => {
            rec.u64(1)?;
            rec.u64(sets.len() as u64)?;
            for s in sets {
                rec.u64(s.kind.tag())?;
                for v in [s.grid.0, s.grid.1, s.patch_dim.0, s.patch_dim.1] {
                    rec.u64(v as u64)?;
                }
                let centers = Array2::from_shape_fn((s.centers_px.len(), 2), |(i, j)| if j == 0 { s.centers_px[i].0 } else { s.centers_px[i].1 });
                rec.matrix(centers.view())?;
                rec.matrix(s.descriptors.view())?;
            }
        }
    }
    rec.finish()
}

pub fn read_lane_features<T: Real, R: Read>(r: R) -> Result<LaneFeatures<T>> {
    let mut rec = RecordReader::open(r, FEATURES_KIND, 1)?;
    match rec.u64()? {
        0 => Ok(LaneFeatures::Fixed(rec.matrix()?)),
        1 => {
            let n = rec.usize()?;
            let mut sets = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let kind = DescriptorKind::from_tag(rec.u64()?)?;
                let grid = (rec.usize()?, rec.usize()?);
                let patch_dim = (rec.usize()?, rec.usize()?);
                let centers: Array2<f64> = rec.matrix()?;
                let descriptors: Array2<T> = rec.matrix()?;
                if centers.ncols() != 2 || centers.nrows() != descriptors.nrows() || grid.0 * grid.1 != descriptors.nrows() {
                    return Err(Error::Format("descriptor set shape does not match its grid".into()));
                }
                let centers_px = centers.rows().into_iter().map(|c| (c[0], c[1])).collect();
                sets.push(DescriptorSet { descriptors, centers_px, kind, grid, patch_dim });
            }
            Ok(LaneFeatures::Descriptors(sets))
        }
        t => Err(Error::Format(format!("unknown lane feature tag {t}"))),
    }
}

/// A fold model is a header record (algorithm, training lanes, codebook
/// tag) followed by the codebook record, if any, and the classifier record.
pub fn write_fold_model<T: Real, W: Write>(model: &FoldModel<T>, w: W) -> Result<W> {
    let mut rec = RecordWriter::new(w, FOLD_KIND, 1)?;
    rec.str(&model.algorithm.to_string())?;
    rec.u64(model.train_lanes.len() as u64)?;
    for &l in &model.train_lanes {
        rec.u64(l as u64)?;
    }
    rec.u64(match model.codebook {
        None => 0,
        Some(Codebook::Bov(_)) => 1,
        Some(Codebook::Fv(_)) => 2,
    })?;
    let w = rec.finish()?;
    let w = match &model.codebook {
        None => w,
        Some(Codebook::Bov(d)) => write_bov(d, w)?,
        Some(Codebook::Fv(b)) => write_fv(b, w)?,
    };
    write_classifier(&model.classifier, w)
}

pub fn read_fold_model<T: Real, R: Read>(mut r: R) -> Result<FoldModel<T>> {
    let mut rec = RecordReader::open(&mut r, FOLD_KIND, 1)?;
    let algorithm: Algorithm = rec.str()?.parse()?;
    let n = rec.usize()?;
    let train_lanes = (0..n).map(|_| rec.usize()).collect::<Result<Vec<_>>>()?;
    let tag = rec.u64()?;
    let codebook = match tag {
        0 => None,
        1 => Some(Codebook::Bov(read_bov(&mut r)?)),
        2 => Some(Codebook::Fv(read_fv(&mut r)?)),
        t => return Err(Error::Format(format!("unknown codebook tag {t}"))),
    };
    if codebook.is_some() != algorithm.feature.is_learned() {
        return Err(Error::Format(format!("{algorithm}: codebook presence does not match the feature kind")));
    }
    let classifier = read_classifier(&mut r)?;
    if classifier.kind != algorithm.classifier {
        return Err(Error::Format(format!("{algorithm}: stored classifier is {}", classifier.kind)));
    }
    Ok(FoldModel { algorithm, train_lanes, codebook, classifier })
}
