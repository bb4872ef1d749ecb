//! Decision-level fusion: a second PLSDA over per-algorithm confidences,
//! with the input set chosen by sequential forward search (SFS) on inner
//! cross-validated pAUC.
//!
//! Inner CV produces one out-of-fold confidence per training alarm; those
//! are scored together against the training lanes' targets, so the inner
//! pAUC has the same meaning as the outer one.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Classifier, ClassifierKind, ClassifierParams};
use crate::error::{Error, Result};
use crate::evaluation::AlarmTargets;
use crate::rng::rng_for;

/// Rows are alarms, columns are algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub labels: Vec<String>,
    pub values: Array2<f64>,
}

impl PredictionMatrix {
    pub fn new(labels: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch { expected: values.ncols(), got: labels.len() });
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate prediction column {l:?}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction matrix"));
        }
        Ok(Self { labels, values })
    }

    /// Columns given as (label, per-alarm values), all of one length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.1.len());
        let mut values = Array2::zeros((rows, columns.len()));
        let mut labels = Vec::with_capacity(columns.len());
        for (j, (label, col)) in columns.into_iter().enumerate() {
            if col.len() != rows {
                return Err(Error::DimensionMismatch { expected: rows, got: col.len() });
            }
            values.column_mut(j).iter_mut().zip(col).for_each(|(v, c)| *v = c);
            labels.push(label);
        }
        Self::new(labels, values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingColumn(label.to_string()))
    }

    pub fn columns(&self, idx: &[usize]) -> Array2<f64> {
        self.values.select(Axis(1), idx)
    }

    pub fn rows(&self, idx: &[usize]) -> Self {
        Self { labels: self.labels.clone(), values: self.values.select(Axis(0), idx) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub max_nf: usize,
    pub inner_folds: usize,
    pub auto_stop: bool,
    pub far_max: f64,
    pub plsda_components: usize,
    /// Fold reshuffles allowed before giving up on a class-complete split.
    pub max_reshuffles: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { max_nf: 10, inner_folds: 5, auto_stop: true, far_max: 0.02, plsda_components: 5, max_reshuffles: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsStep {
    pub column: usize,
    pub label: String,
    pub inner_cv_pauc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    /// Selected columns in the order they were added.
    pub selected: Vec<usize>,
    pub selected_labels: Vec<String>,
    pub classifier: Classifier<f64>,
    /// One entry per accepted step.
    pub trace: Vec<SfsStep>,
    /// Best candidate of the step that triggered the auto-stop.
    pub rejected: Option<SfsStep>,
}

fn fusion_params(p: &FusionParams) -> ClassifierParams {
    ClassifierParams { plsda_components: p.plsda_components, ..ClassifierParams::default() }
}

/// Stratified random fold ids: each class is shuffled and dealt round-robin.
/// Reshuffled until every training split holds both classes.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64, max_reshuffles: usize) -> Result<Vec<usize>> {
    if k < 2 || k > labels.len() {
        return Err(Error::InvalidArgument(format!("need 2 ≤ folds ≤ {} rows, got {k}", labels.len())));
    }
    for attempt in 0..max_reshuffles.max(1) {
        let mut rng = rng_for(seed, &[0xF01D, attempt as u64]);
        let mut fold = vec![0; labels.len()];
        let mut next = 0;
        for class in [true, false] {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                fold[i] = next % k;
                next += 1;
            }
        }
        let complete = (0..k).all(|f| {
            let train = labels.iter().zip(&fold).filter(|&(_, &g)| g != f);
            let pos = train.clone().filter(|(&l, _)| l).count();
            pos > 0 && pos < train.count()
        });
        if complete {
            return Ok(fold);
        }
    }
    Err(Error::InvalidArgument(format!("no {k}-fold split keeps both classes in every training split")))
}

/// Out-of-fold second-stage confidences for the columns `cols`.
pub fn inner_cv_predictions(x: ArrayView2<'_, f64>, y: &[bool], folds: &[usize], k: usize, params: &ClassifierParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; y.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let model = Classifier::fit(ClassifierKind::Plsda, x.select(Axis(0), &train).view(), &ytr, params)?;
        let pred = model.predict(x.select(Axis(0), &test).view())?;
        for (&i, &p) in test.iter().zip(pred.iter()) {
            out[i] = p;
        }
    }
    Ok(out)
}

/// Greedy forward selection of prediction columns. Candidates within a step
/// are scored in parallel; ties go to the lower column index. In auto-stop
/// mode a step whose best inner-CV pAUC is strictly below the incumbent's
/// ends the search without being added.
pub fn sfs_select(train: &PredictionMatrix, truth: &AlarmTargets, params: &FusionParams, seed: u64) -> Result<FusionModel> {
    if params.max_nf == 0 {
        return Err(Error::InvalidArgument("max_nf must be at least 1".into()));
    }
    if train.n_rows() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: train.n_rows() });
    }
    let y = truth.labels();
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(Error::InvalidArgument("fusion training needs both hits and false alarms".into()));
    }
    let folds = stratified_folds(&y, params.inner_folds, seed, params.max_reshuffles)?;
    let cparams = fusion_params(params);
    let score = |cols: &[usize]| -> Result<f64> {
        let x = train.columns(cols);
        let conf = inner_cv_predictions(x.view(), &y, &folds, params.inner_folds, &cparams)?;
        truth.pauc(&conf, params.far_max)
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut trace: Vec<SfsStep> = Vec::new();
    let mut rejected = None;
    while selected.len() < params.max_nf.min(train.n_cols()) {
        let candidates: Vec<usize> = (0..train.n_cols()).filter(|c| !selected.contains(c)).collect();
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|&c| {
                let mut cols = selected.clone();
                cols.push(c);
                score(&cols)
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let step = SfsStep { column: candidates[best], label: train.labels[candidates[best]].clone(), inner_cv_pauc: scores[best] };
        if params.auto_stop && trace.last().is_some_and(|t| step.inner_cv_pauc < t.inner_cv_pauc) {
            rejected = Some(step);
            break;
        }
        selected.push(step.column);
        trace.push(step);
    }
    let classifier = Classifier::fit(ClassifierKind::Plsda, train.columns(&selected).view(), &y, &cparams)?;
    Ok(FusionModel {
        selected_labels: selected.iter().map(|&c| train.labels[c].clone()).collect(),
        selected,
        classifier,
        trace,
        rejected,
    })
}

/// Second-stage confidences; selected columns are looked up by label.
pub fn fuse_predict(model: &FusionModel, test: &PredictionMatrix) -> Result<Vec<f64>> {
    let idx: Vec<usize> = model.selected_labels.iter().map(|l| test.column_index(l)).collect::<Result<_>>()?;
    Ok(model.classifier.predict(test.columns(&idx).view())?.to_vec())
}

/// Refits the second stage on the first `n` selected columns.
pub fn refit_prefix(model: &FusionModel, train: &PredictionMatrix, truth: &AlarmTargets, params: &FusionParams, n: usize) -> Result<FusionModel> {
    if n == 0 || n > model.selected.len() {
        return Err(Error::InvalidArgument(format!("prefix length {n} outside 1..={}", model.selected.len())));
    }
    let selected = model.selected[..n].to_vec();
    let classifier = Classifier::fit(ClassifierKind::Plsda, train.columns(&selected).view(), &truth.labels(), &fusion_params(params))?;
    Ok(FusionModel {
        selected_labels: model.selected_labels[..n].to_vec(),
        selected,
        classifier,
        trace: model.trace[..n].to_vec(),
        rejected: None,
    })
}

/// Fused test confidences for N_f = 1..=max_nf, the greedy prefixes of one
/// search run without auto-stop, plus that run.
pub fn fusion_prefix_predictions(train: &PredictionMatrix, train_truth: &AlarmTargets, test: &PredictionMatrix, params: &FusionParams, seed: u64) -> Result<(FusionModel, Vec<Vec<f64>>)> {
    let full = sfs_select(train, train_truth, &FusionParams { auto_stop: false, ..params.clone() }, seed)?;
    let preds = (1..=full.selected.len())
        .map(|n| fuse_predict(&refit_prefix(&full, train, train_truth, params, n)?, test))
        .collect::<Result<_>>()?;
    Ok((full, preds))
}

/// Test pAUC of the fused detector for N_f = 1..=max_nf.
pub fn fusion_curve(train: &PredictionMatrix, train_truth: &AlarmTargets, test: &PredictionMatrix, test_truth: &AlarmTargets, params: &FusionParams, seed: u64) -> Result<Vec<f64>> {
    let (_, preds) = fusion_prefix_predictions(train, train_truth, test, params, seed)?;
    preds.iter().map(|p| test_truth.pauc(p, params.far_max)).collect()
}
