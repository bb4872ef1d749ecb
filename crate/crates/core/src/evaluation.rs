//! Halo scoring of alarms against ground truth, step ROC curves in
//! (false alarms per m², P_d), partial AUC up to a FAR limit, vertical ROC
//! averaging and bootstrap confidence intervals.
//!
//! ROC bookkeeping is done in integer false-alarm counts; FAR is the count
//! over the scored area, so the partial area is exact for hand-sized cases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruthTarget;
use crate::error::{Error, Result};
use crate::geometry::Utm;
use crate::prescreener::Alarm;
use crate::rng::rng_for;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub halo_m: f64,
    pub far_max: f64,
    pub n_boot: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { halo_m: 1.0, far_max: 0.02, n_boot: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlarmLabel {
    Hit,
    FalseAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredAlarm {
    pub utm: Utm,
    pub confidence: f64,
    pub label: AlarmLabel,
    /// Index of the credited target (nearest within the halo).
    pub target: Option<usize>,
}

impl ScoredAlarm {
    pub fn is_hit(&self) -> bool {
        self.label == AlarmLabel::Hit
    }
}

/// An alarm within `halo` of some target is a hit credited to the nearest
/// one (ties to the lower index); otherwise a false alarm.
pub fn score_alarms(alarms: &[Alarm], truth: &[GroundTruthTarget], halo: f64) -> Vec<ScoredAlarm> {
    alarms
        .iter()
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for (i, t) in truth.iter().enumerate() {
                let d = a.utm.distance(&t.utm);
                if d <= halo && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            ScoredAlarm {
                utm: a.utm,
                confidence: a.confidence,
                label: if best.is_some() { AlarmLabel::Hit } else { AlarmLabel::FalseAlarm },
                target: best.map(|(i, _)| i),
            }
        })
        .collect()
}

/// Training labels for classifier fitting: hit ⇒ target.
pub fn labels(scored: &[ScoredAlarm]) -> Vec<bool> {
    scored.iter().map(ScoredAlarm::is_hit).collect()
}

/// One operating point per distinct confidence threshold, descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_alarms: usize,
    pub detected: usize,
    pub far: f64,
    pub pd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_targets: usize,
    pub area_m2: f64,
}

/// Threshold sweep. P_d counts each target once, at the first crediting
/// alarm; FAR is false alarms with confidence ≥ τ per m².
pub fn roc_curve(scored: &[ScoredAlarm], n_targets: usize, area_m2: f64) -> Result<RocCurve> {
    if !(area_m2 > 0.0) || n_targets == 0 {
        return Err(Error::InvalidArgument(format!("ROC needs area > 0 and targets > 0 (area {area_m2}, targets {n_targets})")));
    }
    if scored.iter().any(|s| s.confidence.is_nan()) {
        return Err(Error::NonFinite("alarm confidence"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].confidence.total_cmp(&scored[a].confidence));
    let max_target = scored.iter().filter_map(|s| s.target).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; max_target.max(n_targets)];
    let (mut fa, mut det) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let tau = scored[order[i]].confidence;
        while i < order.len() && scored[order[i]].confidence == tau {
            let s = &scored[order[i]];
            match s.target {
                Some(t) if !seen[t] => {
                    seen[t] = true;
                    det += 1;
                }
                Some(_) => {}
                None => fa += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: tau,
            false_alarms: fa,
            detected: det,
            far: fa as f64 / area_m2,
            pd: det as f64 / n_targets as f64,
        });
    }
    Ok(RocCurve { points, n_targets, area_m2 })
}

impl RocCurve {
    /// Best P_d reachable with at most `fa` false alarms (0 before the first point).
    pub fn pd_at_count(&self, fa: usize) -> f64 {
        let det = self.points.iter().take_while(|p| p.false_alarms <= fa).last().map_or(0, |p| p.detected);
        det as f64 / self.n_targets as f64
    }

    /// Right-continuous step P_d at a FAR value.
    pub fn pd_at(&self, far: f64) -> f64 {
        // Small slack keeps k/area itself on the right side of the step.
        let fa = (far * self.area_m2 * (1.0 + 1e-12)).floor().max(0.0) as usize;
        self.pd_at_count(fa)
    }
}

/// Step integral of P_d over FAR ∈ [0, far_max], divided by far_max; the
/// curve is extended flat past its last point.
pub fn pauc(roc: &RocCurve, far_max: f64) -> Result<f64> {
    if !(far_max > 0.0) {
        return Err(Error::InvalidArgument(format!("far_max must be positive, got {far_max}")));
    }
    // In false-alarm counts: the step at count k covers [k, k + 1).
    let m = far_max * roc.area_m2;
    let whole = m.floor();
    let mut det_sum = 0usize;
    let mut det = 0usize;
    let mut pts = roc.points.iter().peekable();
    for k in 0..whole as usize {
        while let Some(p) = pts.peek() {
            if p.false_alarms <= k {
                det = p.detected;
                pts.next();
            } else {
                break;
            }
        }
        det_sum += det;
    }
    let frac = m - whole;
    let tail = if frac > 0.0 { frac * roc.pd_at_count(whole as usize) } else { 0.0 };
    let n = roc.n_targets as f64;
    Ok(((det_sum as f64 / n) + tail) / m)
}

/// Scores, P_d and pAUC for one alarm list against one truth set.
pub fn evaluate_alarms(alarms: &[Alarm], truth: &[GroundTruthTarget], area_m2: f64, params: &EvalParams) -> Result<(RocCurve, f64)> {
    let scored = score_alarms(alarms, truth, params.halo_m);
    let roc = roc_curve(&scored, truth.len(), area_m2)?;
    let p = pauc(&roc, params.far_max)?;
    Ok((roc, p))
}

/// Scored alarms of one lane, for pooling across folds.
#[derive(Debug, Clone)]
pub struct LaneScores {
    pub scored: Vec<ScoredAlarm>,
    pub n_targets: usize,
    pub area_m2: f64,
}

/// One ROC over several lanes: targets are keyed by lane, areas and
/// counts add.
pub fn pooled_roc(lanes: &[LaneScores]) -> Result<RocCurve> {
    let mut all = Vec::new();
    let mut offset = 0;
    for l in lanes {
        all.extend(l.scored.iter().map(|s| ScoredAlarm { target: s.target.map(|t| t + offset), ..*s }));
        offset += l.n_targets;
    }
    roc_curve(&all, offset, lanes.iter().map(|l| l.area_m2).sum())
}

/// Target keys of an alarm list plus the P_d denominator and area, so a
/// confidence vector over the same alarms can be scored directly.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmTargets {
    pub targets: Vec<Option<usize>>,
    pub n_targets: usize,
    pub area_m2: f64,
}

impl AlarmTargets {
    pub fn from_scored(scored: &[ScoredAlarm], n_targets: usize, area_m2: f64) -> Self {
        Self { targets: scored.iter().map(|s| s.target).collect(), n_targets, area_m2 }
    }

    /// Concatenation across lanes with lane-keyed targets.
    pub fn concat(parts: &[AlarmTargets]) -> Self {
        let mut targets = Vec::new();
        let mut offset = 0;
        for p in parts {
            targets.extend(p.targets.iter().map(|t| t.map(|t| t + offset)));
            offset += p.n_targets;
        }
        Self { targets, n_targets: offset, area_m2: parts.iter().map(|p| p.area_m2).sum() }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_some).collect()
    }

    /// Rows `idx` (repeats allowed); target keys and area are kept.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { targets: idx.iter().map(|&i| self.targets[i]).collect(), ..self.clone() }
    }

    pub fn scored(&self, confidence: &[f64]) -> Result<Vec<ScoredAlarm>> {
        if confidence.len() != self.targets.len() {
            return Err(Error::DimensionMismatch { expected: self.targets.len(), got: confidence.len() });
        }
        Ok(self
            .targets
            .iter()
            .zip(confidence)
            .map(|(&target, &confidence)| ScoredAlarm {
                utm: Utm::default(),
                confidence,
                label: if target.is_some() { AlarmLabel::Hit } else { AlarmLabel::FalseAlarm },
                target,
            })
            .collect())
    }

    pub fn roc(&self, confidence: &[f64]) -> Result<RocCurve> {
        roc_curve(&self.scored(confidence)?, self.n_targets, self.area_m2)
    }

    pub fn pauc(&self, confidence: &[f64], far_max: f64) -> Result<f64> {
        pauc(&self.roc(confidence)?, far_max)
    }
}

pub const FAR_GRID_STEP: f64 = 0.0005;

/// 0, 0.0005, …, `far_max`.
pub fn far_grid(far_max: f64) -> Vec<f64> {
    let n = (far_max / FAR_GRID_STEP).round() as usize;
    (0..=n).map(|i| i as f64 * FAR_GRID_STEP).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedRoc {
    pub far: Vec<f64>,
    pub mean: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

/// Mean and 1.96·sd/√n band of sample values (zero width for n = 1).
pub fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = 1.96 * sd / n.sqrt();
    (mean, mean - h, mean + h)
}

/// Pointwise P_d average on the fixed FAR grid.
pub fn vertical_average(rocs: &[RocCurve], far_max: f64) -> Result<AveragedRoc> {
    if rocs.is_empty() {
        return Err(Error::InvalidArgument("vertical averaging needs at least one curve".into()));
    }
    let far = far_grid(far_max);
    let (mut mean, mut ci_lo, mut ci_hi) = (Vec::new(), Vec::new(), Vec::new());
    for &f in &far {
        let vals: Vec<f64> = rocs.iter().map(|r| r.pd_at(f)).collect();
        let (m, lo, hi) = mean_ci(&vals);
        mean.push(m);
        ci_lo.push(lo);
        ci_hi.push(hi);
    }
    Ok(AveragedRoc { far, mean, ci_lo, ci_hi })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaucScore {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub far_max: f64,
    /// One value per bootstrap trial.
    pub trials: Vec<f64>,
}

impl PaucScore {
    pub fn from_trials(trials: Vec<f64>, far_max: f64) -> Self {
        let (mean, ci_lo, ci_hi) = mean_ci(&trials);
        Self { mean, ci_lo, ci_hi, far_max, trials }
    }
}

/// Same-size resample with replacement that contains both classes;
/// redrawn up to 100 times.
pub fn bootstrap_indices<R: Rng>(rng: &mut R, labels: &[bool]) -> Result<Vec<usize>> {
    let n = labels.len();
    for _ in 0..100 {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        if pos > 0 && pos < n {
            return Ok(idx);
        }
    }
    Err(Error::InvalidArgument("could not draw a bootstrap sample with both classes in 100 attempts".into()))
}

/// Runs `trial(resample)` for `n_boot` resamples of the training rows; the
/// closure fits on the resample and returns the pAUC on the fixed test set.
/// Resamples are drawn from `seed` per trial, so results do not depend on
/// scheduling.
pub fn bootstrap_eval<F>(train_labels: &[bool], n_boot: usize, seed: u64, far_max: f64, trial: F) -> Result<PaucScore>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n_boot < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs n_boot ≥ 2, got {n_boot}")));
    }
    let values: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[0xB007, b as u64]);
            trial(&bootstrap_indices(&mut rng, train_labels)?)
        })
        .collect::<Result<_>>()?;
    Ok(PaucScore::from_trials(values, far_max))
}

/// Leave-one-lane-out folds: (training lanes, test lane).
pub fn lane_folds(n_lanes: usize) -> Result<Vec<(Vec<usize>, usize)>> {
    if n_lanes < 2 {
        return Err(Error::InvalidArgument(format!("lane cross-validation needs at least 2 lanes, got {n_lanes}")));
    }
    Ok((0..n_lanes).map(|t| ((0..n_lanes).filter(|&l| l != t).collect(), t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetalClass;
    use proptest::prelude::*;
    use rand::Rng;

    fn target(e: f64, n: f64) -> GroundTruthTarget {
        GroundTruthTarget { target_id: format!("t{e}"), utm: Utm::new(e, n), metal_class: MetalClass::Metal }
    }

    fn toy(labels: &[Option<usize>], conf: &[f64]) -> Vec<ScoredAlarm> {
        labels
            .iter()
            .zip(conf)
            .map(|(&t, &c)| ScoredAlarm {
                utm: Utm::default(),
                confidence: c,
                label: if t.is_some() { AlarmLabel::Hit } else { AlarmLabel::FalseAlarm },
                target: t,
            })
            .collect()
    }

    #[test]
    fn halo_scoring() {
        let truth = vec![target(0.0, 0.0), target(10.0, 0.0)];
        let alarms = vec![
            Alarm::new(Utm::new(0.0, 0.0), 1.0),
            Alarm::new(Utm::new(1.5, 0.0), 1.0),
            Alarm::new(Utm::new(9.2, 0.3), 1.0),
            Alarm::new(Utm::new(10.0, 1.0), 1.0),
        ];
        let s = score_alarms(&alarms, &truth, 1.0);
        assert_eq!(s[0].target, Some(0));
        assert_eq!(s[1].label, AlarmLabel::FalseAlarm);
        assert_eq!((s[2].target, s[3].target), (Some(1), Some(1)));
        // Two hits on one target count it once: thresholds 3, 2, 1.
        let scored = toy(&[Some(0), Some(0), None], &[3.0, 2.0, 1.0]);
        let roc = roc_curve(&scored, 1, 10.0).unwrap();
        let pts: Vec<(usize, usize)> = roc.points.iter().map(|p| (p.false_alarms, p.detected)).collect();
        assert_eq!(pts, vec![(0, 1), (0, 1), (1, 1)]);
    }

    #[test]
    fn four_alarm_toy() {
        let scored = toy(&[Some(0), None, Some(1), None], &[4.0, 3.0, 2.0, 1.0]);
        let roc = roc_curve(&scored, 2, 100.0).unwrap();
        let pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.far, p.pd)).collect();
        assert_eq!(pts, vec![(0.0, 0.5), (0.01, 0.5), (0.01, 1.0), (0.02, 1.0)]);
        assert_eq!(pauc(&roc, 0.02).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_null_detectors() {
        let perfect = toy(&[Some(0), Some(1), None, None], &[4.0, 3.0, 2.0, 1.0]);
        let roc = roc_curve(&perfect, 2, 100.0).unwrap();
        assert_eq!(roc.pd_at(0.0), 1.0);
        assert_eq!(pauc(&roc, 0.02).unwrap(), 1.0);
        let null = toy(&[None, None, None], &[3.0, 2.0, 1.0]);
        let roc = roc_curve(&null, 2, 100.0).unwrap();
        assert!(roc.points.iter().all(|p| p.pd == 0.0));
        assert_eq!(pauc(&roc, 0.02).unwrap(), 0.0);
        assert_eq!(pauc(&roc_curve(&[], 3, 50.0).unwrap(), 0.02).unwrap(), 0.0);
    }

    #[test]
    fn fractional_count_limit() {
        // Area 75 m²: far_max 0.02 is 1.5 false alarms.
        let scored = toy(&[None, Some(0), None, Some(1)], &[4.0, 3.0, 2.0, 1.0]);
        let roc = roc_curve(&scored, 2, 75.0).unwrap();
        let want = (0.0 + 0.5 * 0.5) / 1.5;
        assert!((pauc(&roc, 0.02).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(roc_curve(&[], 0, 1.0).is_err());
        assert!(roc_curve(&[], 1, 0.0).is_err());
        let roc = roc_curve(&[], 1, 1.0).unwrap();
        assert!(pauc(&roc, 0.0).is_err());
        assert!(vertical_average(&[], 0.02).is_err());
        assert!(lane_folds(1).is_err());
    }

    fn pauc_of(order: &[bool], area: f64, n_targets: usize) -> f64 {
        let mut next = 0;
        let labels: Vec<Option<usize>> = order
            .iter()
            .map(|&h| {
                if h {
                    next += 1;
                    Some(next - 1)
                } else {
                    None
                }
            })
            .collect();
        let conf: Vec<f64> = (0..order.len()).rev().map(|v| v as f64).collect();
        pauc(&roc_curve(&toy(&labels, &conf), n_targets, area).unwrap(), 0.02).unwrap()
    }

    proptest! {
        #[test]
        fn ranking_improvements_never_hurt(order in proptest::collection::vec(any::<bool>(), 2..40), pick in any::<proptest::sample::Index>(), area in 20.0f64..400.0) {
            let n_t = order.iter().filter(|&&h| h).count().max(1);
            let base = pauc_of(&order, area, n_t);
            prop_assert!((0.0..=1.0).contains(&base));
            // Swap an FA directly above a hit.
            let swaps: Vec<usize> = (0..order.len() - 1).filter(|&i| !order[i] && order[i + 1]).collect();
            if !swaps.is_empty() {
                let i = swaps[pick.index(swaps.len())];
                let mut better = order.clone();
                better.swap(i, i + 1);
                prop_assert!(pauc_of(&better, area, n_t) >= base);
            }
        }

        #[test]
        fn roc_is_monotone(order in proptest::collection::vec(any::<bool>(), 1..60)) {
            let mut next = 0;
            let labels: Vec<Option<usize>> = order.iter().map(|&h| if h { next += 1; Some(next - 1) } else { None }).collect();
            let conf: Vec<f64> = (0..order.len()).map(|i| ((i * 7919) % 13) as f64).collect();
            let roc = roc_curve(&toy(&labels, &conf), next.max(1), 50.0).unwrap();
            for w in roc.points.windows(2) {
                prop_assert!(w[1].far >= w[0].far && w[1].pd >= w[0].pd);
            }
            prop_assert!(roc.points.iter().all(|p| (0.0..=1.0).contains(&p.pd)));
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn random_scores_match_combinatorial_expectation() {
        // Three hits, four false alarms, area 150 m² (far_max = 3 FAs).
        let kinds = [true, true, true, false, false, false, false];
        let perms = permutations(kinds.len());
        let exact = perms.iter().map(|p| pauc_of(&p.iter().map(|&i| kinds[i]).collect::<Vec<_>>(), 150.0, 3)).sum::<f64>() / perms.len() as f64;
        let mut rng = rng_for(99, &[]);
        let trials = 4000;
        let values: Vec<f64> = (0..trials)
            .map(|_| {
                let conf: Vec<f64> = kinds.iter().map(|_| rng.random()).collect();
                let labels: Vec<Option<usize>> = kinds.iter().scan(0, |n, &h| Some(if h { *n += 1; Some(*n - 1) } else { None })).collect();
                pauc(&roc_curve(&toy(&labels, &conf), 3, 150.0).unwrap(), 0.02).unwrap()
            })
            .collect();
        let (mean, lo, _) = mean_ci(&values);
        let se = (mean - lo) / 1.96;
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn vertical_average_cases() {
        let a = roc_curve(&toy(&[Some(0), None, Some(1)], &[3.0, 2.0, 1.0]), 2, 100.0).unwrap();
        let b = roc_curve(&toy(&[None, Some(0), Some(1)], &[3.0, 2.0, 1.0]), 2, 100.0).unwrap();
        let same = vertical_average(&[a.clone(), a.clone()], 0.02).unwrap();
        assert_eq!(same.far.len(), 41);
        assert_eq!(same.ci_lo, same.mean);
        assert_eq!(same.ci_hi, same.mean);
        let single = vertical_average(std::slice::from_ref(&b), 0.02).unwrap();
        assert_eq!(single.mean, single.ci_hi);
        let avg = vertical_average(&[a, b], 0.02).unwrap();
        // FAR 0: a has P_d 0.5, b has 0. FAR 0.005: same. FAR 0.01: a 1.0, b 1.0.
        assert_eq!((avg.mean[0], avg.mean[10], avg.mean[20]), (0.25, 0.25, 1.0));
        let h = 1.96 * (0.125f64).sqrt() / 2f64.sqrt();
        assert!((avg.ci_hi[0] - (0.25 + h)).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_contract() {
        let labels = [true, false, true, false, false, true, false, false];
        let sizes = std::sync::Mutex::new(Vec::new());
        let s = bootstrap_eval(&labels, 10, 3, 0.02, |idx| {
            sizes.lock().unwrap().push(idx.len());
            Ok(0.5)
        })
        .unwrap();
        assert_eq!((s.mean, s.ci_lo, s.ci_hi), (0.5, 0.5, 0.5));
        assert!(sizes.into_inner().unwrap().iter().all(|&n| n == labels.len()));
        assert!(bootstrap_eval(&labels, 1, 3, 0.02, |_| Ok(0.0)).is_err());
        assert!(bootstrap_eval(&[true, true], 3, 3, 0.02, |_| Ok(0.0)).is_err());
        // Trials depend only on the seed.
        let draw = |idx: &[usize]| Ok(idx.iter().sum::<usize>() as f64);
        assert_eq!(bootstrap_eval(&labels, 5, 8, 0.02, draw).unwrap(), bootstrap_eval(&labels, 5, 8, 0.02, draw).unwrap());
    }

    #[test]
    fn bootstrap_width_tracks_trial_variance() {
        let labels = [true, false, true, false, false, true];
        let width = |spread: f64| {
            let s = bootstrap_eval(&labels, 10, 4, 0.02, |idx| {
                let u = idx.iter().map(|&i| i as f64).sum::<f64>() / (5.0 * idx.len() as f64);
                Ok(0.5 + spread * (u - 0.5))
            })
            .unwrap();
            s.ci_hi - s.ci_lo
        };
        let w: Vec<f64> = [1.0, 0.5, 0.1, 0.0].iter().map(|&s| width(s)).collect();
        assert!(w.windows(2).all(|p| p[1] < p[0] || p[1] == 0.0));
        assert_eq!(w[3], 0.0);
    }

    #[test]
    fn pooling_symmetric_lanes_equals_each_lane() {
        let lane = LaneScores { scored: toy(&[Some(0), None, Some(1), None, None, Some(2)], &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]), n_targets: 4, area_m2: 100.0 };
        let single = pauc(&roc_curve(&lane.scored, 4, 100.0).unwrap(), 0.02).unwrap();
        let pooled = pauc(&pooled_roc(&[lane.clone(), lane.clone(), lane]).unwrap(), 0.02).unwrap();
        assert!((pooled - single).abs() < 1e-15, "{pooled} vs {single}");
        assert_eq!(lane_folds(3).unwrap(), vec![(vec![1, 2], 0), (vec![0, 2], 1), (vec![0, 1], 2)]);
    }
}
