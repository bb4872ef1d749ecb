//! One function per subcommand. Each reads its upstream artifacts, writes
//! its own and returns a one-line summary.

use std::collections::BTreeSet;

use anyhow::{bail, Context, Result};
use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use flgpr_core::classifiers::ClassifierKind;
use flgpr_core::confmap::{confidence_map, rank_percentiles, render_dictionary};
use flgpr_core::dataset::{generate_lane, read_lane, write_lane, Channel};
use flgpr_core::evaluation::{lane_folds, vertical_average, AlarmTargets, RocCurve};
use flgpr_core::features::FeatureKind;
use flgpr_core::fusion::SfsStep;
use flgpr_core::pipeline::{
    fusion_curve_cv, fusion_cv, lane_cv, lane_features, log_gabor_bank, pooled_targets, prepare_alarms, prescreen_and_score, read_fold_model,
    read_lane_features, train_fold, write_fold_model, write_lane_features, Algorithm, AlgorithmCv, Codebook, CvOptions, LaneAlarms, LaneFeatures,
};

use crate::artifacts::{create, open, read_alarms, read_predictions, read_rows, require, slug, write_alarms, write_predictions, write_rows, Layout, PredictionRow, ResultRow};
use crate::plot::{gray_png, pale, Canvas, PALETTE};

/// Working precision of patches, features and first-stage models.
type T = f32;

pub fn generate(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let (mut frames, mut targets) = (0, 0);
    for (i, spec) in layout.cfg.lanes.iter().enumerate() {
        let mut spec = spec.clone();
        spec.seed = layout.lane_seed(i);
        let lane = generate_lane(&spec).with_context(|| format!("generating lane {}", spec.lane_id))?;
        frames += lane.frames.len();
        targets += lane.truth.len();
        write_lane(&lane, &layout.lane(i))?;
        info!("lane {} → {}", spec.lane_id, layout.lane(i).display());
    }
    Ok(format!("generate: {} lanes, {frames} frames, {targets} targets → {}", layout.cfg.lanes.len(), layout.root.join("lanes").display()))
}

pub fn prescreen(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let mut parts = Vec::new();
    let mut confidences = Vec::new();
    for i in 0..layout.cfg.lanes.len() {
        let path = layout.lane(i);
        require(&path, "generate")?;
        let lane = read_lane(&path)?;
        let alarms = prescreen_and_score(&lane, &layout.cfg.pipeline)?;
        write_alarms(&alarms, &layout.alarms(i), &layout.alarms_meta(i))?;
        confidences.extend(alarms.alarms.iter().map(|a| a.confidence));
        parts.push(alarms.targets);
    }
    let pooled = AlarmTargets::concat(&parts);
    let found: BTreeSet<usize> = pooled.targets.iter().flatten().copied().collect();
    let pauc = pooled.pauc(&confidences, layout.cfg.pipeline.eval.far_max)?;
    Ok(format!(
        "prescreen: {} alarms, {}/{} targets within the halo, prescreener pooled pAUC {pauc:.3} → {}",
        pooled.len(),
        found.len(),
        pooled.n_targets,
        layout.root.join("alarms").display()
    ))
}

fn load_alarms(layout: &Layout) -> Result<Vec<LaneAlarms>> {
    (0..layout.cfg.lanes.len()).map(|i| read_alarms(&layout.alarms(i), &layout.alarms_meta(i))).collect()
}

/// One representative feature per stored input (learned kinds share the
/// descriptor sets of their descriptor kind).
fn feature_inputs(features: &[FeatureKind]) -> Vec<FeatureKind> {
    let mut seen = BTreeSet::new();
    features.iter().copied().filter(|&f| seen.insert(Layout::feature_input(f))).collect()
}

pub fn extract(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let bank = log_gabor_bank(&cfg.pipeline);
    let inputs = feature_inputs(&cfg.features);
    let mut written = 0;
    for i in 0..cfg.lanes.len() {
        let path = layout.lane(i);
        require(&path, "generate")?;
        let lane = read_lane(&path)?;
        let alarms = read_alarms(&layout.alarms(i), &layout.alarms_meta(i))?;
        let prepared = prepare_alarms::<T>(&lane, alarms, &cfg.channels)?;
        drop(lane);
        for &ch in &cfg.channels {
            for &f in &inputs {
                let feats = lane_features(&prepared, ch, f, &cfg.pipeline, &bank)?;
                write_lane_features(&feats, create(&layout.features(i, ch, f))?)?;
                written += 1;
            }
        }
        info!("extracted lane {}", cfg.lanes[i].lane_id);
    }
    Ok(format!("extract: {written} feature artifacts ({} inputs × {} channels × {} lanes) → {}", inputs.len(), cfg.channels.len(), cfg.lanes.len(), layout.root.join("features").display()))
}

fn load_inputs(layout: &Layout, channel: Channel, feature: FeatureKind) -> Result<Vec<LaneFeatures<T>>> {
    (0..layout.cfg.lanes.len())
        .map(|i| {
            let path = layout.features(i, channel, feature);
            read_lane_features(open(&path, "extract")?).with_context(|| format!("reading {}", path.display()))
        })
        .collect()
}

pub fn train(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let alarms = load_alarms(layout)?;
    let folds = lane_folds(alarms.len())?;
    let mut written = 0;
    for &ch in &cfg.channels {
        for &f in &cfg.features {
            let inputs = load_inputs(layout, ch, f)?;
            for &c in &cfg.classifiers {
                let alg = Algorithm::new(ch, f, c);
                for (fold, (train, _)) in folds.iter().enumerate() {
                    let model = train_fold(alg, &inputs, &alarms, train, &cfg.pipeline, cfg.seed).with_context(|| format!("training {alg} fold {fold}"))?;
                    write_fold_model(&model, create(&layout.model(&alg, fold))?)?;
                    written += 1;
                }
            }
            info!("trained {ch}/{f}");
        }
    }
    Ok(format!("train: {written} fold models ({} algorithms × {} folds) → {}", cfg.algorithms().len(), folds.len(), layout.root.join("models").display()))
}

pub fn evaluate(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let alarms = load_alarms(layout)?;
    let opts = CvOptions { n_boot: cfg.pipeline.eval.n_boot, crossfit: true };
    let mut rows = Vec::new();
    let mut best: Option<(f64, Algorithm)> = None;
    for &ch in &cfg.channels {
        for &f in &cfg.features {
            let inputs = load_inputs(layout, ch, f)?;
            let results = lane_cv(&alarms, &inputs, ch, f, &cfg.classifiers, &cfg.pipeline, &opts, cfg.seed).with_context(|| format!("evaluating {ch}/{f}"))?;
            for cv in &results {
                write_predictions(cv, &layout.predictions(&cv.algorithm))?;
                rows.extend(result_rows(cv));
                if best.is_none_or(|(p, _)| cv.pooled_pauc > p) {
                    best = Some((cv.pooled_pauc, cv.algorithm));
                }
            }
            info!("evaluated {ch}/{f}");
        }
    }
    write_rows(&rows, &layout.evaluation())?;
    let (p, alg) = best.expect("at least one algorithm");
    Ok(format!("evaluate: {} algorithms under {}-fold lane CV, best {alg} pooled pAUC {p:.3} → {}", cfg.algorithms().len(), alarms.len(), layout.evaluation().display()))
}

fn result_rows(cv: &AlgorithmCv) -> Vec<ResultRow> {
    let a = cv.algorithm;
    let row = |fold: String, m: f64, lo: f64, hi: f64| ResultRow { fold, polarization: a.channel, feature: a.feature, classifier: a.classifier, pauc_mean: m, pauc_ci_lo: lo, pauc_ci_hi: hi };
    let mut rows: Vec<ResultRow> = cv.folds.iter().map(|f| row(f.fold.to_string(), f.pauc, f.pauc, f.pauc)).collect();
    rows.push(match &cv.bootstrap {
        Some(b) => row("pooled".into(), cv.pooled_pauc, b.ci_lo, b.ci_hi),
        None => row("pooled".into(), cv.pooled_pauc, cv.pooled_pauc, cv.pooled_pauc),
    });
    rows
}

fn load_base(layout: &Layout, alarms: &[LaneAlarms]) -> Result<Vec<AlgorithmCv>> {
    let far_max = layout.cfg.pipeline.eval.far_max;
    layout.cfg.algorithms().into_iter().map(|alg| read_predictions(alg, &layout.predictions(&alg), alarms, far_max)).collect()
}

/// One SFS step of one fold; the auto-stop candidate is listed with
/// `accepted = false`.
#[derive(Debug, Serialize, Deserialize)]
struct FusionStepRow {
    fold: usize,
    step: usize,
    added_column: String,
    inner_cv_pauc: f64,
    accepted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FusionCurveRow {
    n_f: usize,
    pauc: f64,
}

pub fn fuse(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let alarms = load_alarms(layout)?;
    let base = load_base(layout, &alarms)?;
    let fused = fusion_cv(&base, &alarms, &cfg.fusion, cfg.seed)?;
    let mut steps = Vec::new();
    for (fold, m) in fused.models.iter().enumerate() {
        let row = |i: usize, s: &SfsStep, accepted| FusionStepRow { fold, step: i + 1, added_column: s.label.clone(), inner_cv_pauc: s.inner_cv_pauc, accepted };
        steps.extend(m.trace.iter().enumerate().map(|(i, s)| row(i, s, true)));
        steps.extend(m.rejected.iter().map(|s| row(m.trace.len(), s, false)));
    }
    write_rows(&steps, &layout.fusion_steps())?;

    let folds = lane_folds(alarms.len())?;
    let mut preds = Vec::new();
    let mut offset = 0;
    for (fold, (_, test)) in folds.iter().enumerate() {
        let n = alarms[*test].alarms.len();
        preds.extend(fused.confidence[offset..offset + n].iter().enumerate().map(|(alarm, &confidence)| PredictionRow { fold, role: "test".into(), lane: *test, alarm, confidence }));
        offset += n;
    }
    write_rows(&preds, &layout.fusion_predictions())?;

    let curve = fusion_curve_cv(&base, &alarms, &cfg.fusion, cfg.seed)?;
    let rows: Vec<FusionCurveRow> = curve.iter().enumerate().map(|(i, &pauc)| FusionCurveRow { n_f: i + 1, pauc }).collect();
    write_rows(&rows, &layout.fusion_curve())?;
    let mut canvas = Canvas::new((0.5, curve.len() as f64 + 0.5), (0.0, 1.0));
    let xs: Vec<f64> = (1..=curve.len()).map(|n| n as f64).collect();
    canvas.polyline(&xs, &curve, PALETTE[0], true);
    for (x, y) in xs.iter().zip(&curve) {
        canvas.marker((*x, *y), PALETTE[0]);
    }
    canvas.save(&layout.figure("fusion-curve"))?;

    let sizes: Vec<String> = fused.models.iter().map(|m| m.selected.len().to_string()).collect();
    Ok(format!(
        "fuse: {} candidate columns, selected per fold [{}], fused pooled pAUC {:.3} → {}",
        base.len(),
        sizes.join(", "),
        fused.pooled_pauc,
        layout.fusion_steps().display()
    ))
}

/// Held-out ROC of each fold for one confidence column.
fn fold_rocs(folds: &[(Vec<usize>, usize)], alarms: &[LaneAlarms], per_fold: &[Vec<f64>]) -> Result<Vec<RocCurve>> {
    folds.iter().zip(per_fold).map(|((_, test), conf)| Ok(alarms[*test].targets.roc(conf)?)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RocRow {
    curve: String,
    far: f64,
    pd: f64,
    ci_lo: f64,
    ci_hi: f64,
}

pub fn report(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let far_max = cfg.pipeline.eval.far_max;
    let evaluation: Vec<ResultRow> = read_rows(&layout.evaluation(), "evaluate")?;
    let mut results = Vec::new();
    for alg in cfg.algorithms() {
        let Some(row) = evaluation.iter().find(|r| r.fold == "pooled" && r.algorithm() == alg) else {
            bail!("{}: no pooled row for {alg}; re-run `flgpr evaluate`", layout.evaluation().display());
        };
        results.push(row.clone());
    }
    write_rows(&results, &layout.results())?;

    // Best algorithm of each polarization, plus the fused detector if fused.
    let alarms = load_alarms(layout)?;
    let folds = lane_folds(alarms.len())?;
    let mut curves: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for &ch in &cfg.channels {
        let best = results.iter().filter(|r| r.polarization == ch).max_by(|a, b| a.pauc_mean.total_cmp(&b.pauc_mean).then(std::cmp::Ordering::Greater)).expect("channel has rows");
        let cv = read_predictions(best.algorithm(), &layout.predictions(&best.algorithm()), &alarms, far_max)?;
        curves.push((best.algorithm().to_string(), cv.folds.into_iter().map(|f| f.test_confidence).collect()));
    }
    let fused_path = layout.fusion_predictions();
    if fused_path.is_file() {
        let rows: Vec<PredictionRow> = read_rows(&fused_path, "fuse")?;
        let mut per_fold = vec![Vec::new(); folds.len()];
        for r in rows {
            per_fold.get_mut(r.fold).with_context(|| format!("{}: fold {} out of range", fused_path.display(), r.fold))?.push(r.confidence);
        }
        curves.push(("fusion".into(), per_fold));
    }
    let mut roc_rows = Vec::new();
    let mut canvas = Canvas::new((0.0, far_max), (0.0, 1.0));
    for (k, (name, per_fold)) in curves.iter().enumerate() {
        let avg = vertical_average(&fold_rocs(&folds, &alarms, per_fold)?, far_max)?;
        let color = PALETTE[k % PALETTE.len()];
        canvas.polyline(&avg.far, &avg.ci_lo, pale(color), false);
        canvas.polyline(&avg.far, &avg.ci_hi, pale(color), false);
        canvas.polyline(&avg.far, &avg.mean, color, true);
        for i in 0..avg.far.len() {
            roc_rows.push(RocRow { curve: name.clone(), far: avg.far[i], pd: avg.mean[i], ci_lo: avg.ci_lo[i], ci_hi: avg.ci_hi[i] });
        }
    }
    write_rows(&roc_rows, &layout.roc())?;
    canvas.save(&layout.figure("roc"))?;
    pauc_bars(layout, &results)?;
    let pooled = pooled_targets(&alarms, &folds);
    Ok(format!(
        "report: {} result rows, ROC of {} detectors over {} alarms / {} targets → {}",
        results.len(),
        curves.len(),
        pooled.len(),
        pooled.n_targets,
        layout.results().display()
    ))
}

/// Bars in result-row order (polarization-major), colored by classifier,
/// with bootstrap CI whiskers.
fn pauc_bars(layout: &Layout, rows: &[ResultRow]) -> Result<()> {
    let n = rows.len() as f64;
    let mut canvas = Canvas::new((0.0, n), (0.0, 1.0));
    for (i, r) in rows.iter().enumerate() {
        let color = PALETTE[ClassifierKind::ALL.iter().position(|&c| c == r.classifier).unwrap_or(0)];
        let x = i as f64;
        canvas.rect((x + 0.1, 0.0), (x + 0.9, r.pauc_mean), color);
        canvas.line((x + 0.5, r.pauc_ci_lo), (x + 0.5, r.pauc_ci_hi), [0, 0, 0]);
    }
    canvas.save(&layout.figure("pauc-bars"))
}

#[derive(Debug, Serialize, Deserialize)]
struct MapIndexRow {
    rank: usize,
    alarm: usize,
    easting: f64,
    northing: f64,
    classifier_confidence: f64,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapCellRow {
    row: usize,
    col: usize,
    center_row_px: f64,
    center_col_px: f64,
    value: f64,
    percentile: f64,
}

pub fn confmap(layout: &Layout) -> Result<String> {
    layout.create_dirs()?;
    let cfg = layout.cfg;
    let mc = &cfg.confmap;
    let alg = Algorithm::new(mc.channel, FeatureKind::BovRaw, ClassifierKind::Plsda);
    let model = read_fold_model::<T, _>(open(&layout.model(&alg, mc.fold), "train")?)?;
    let Some(Codebook::Bov(dict)) = &model.codebook else { bail!("{}: not a BOV model", layout.model(&alg, mc.fold).display()) };
    let test = lane_folds(cfg.lanes.len())?[mc.fold].1;
    let alarms = read_alarms(&layout.alarms(test), &layout.alarms_meta(test))?;
    let input = read_lane_features::<T, _>(open(&layout.features(test, mc.channel, FeatureKind::BovRaw), "extract")?)?;
    let confidence = model.predict(&input)?;
    let mut order: Vec<usize> = (0..confidence.len()).collect();
    order.sort_by(|&a, &b| confidence[b].total_cmp(&confidence[a]).then(a.cmp(&b)));
    order.truncate(mc.top_alarms);

    let lane_path = layout.lane(test);
    require(&lane_path, "generate")?;
    let lane = read_lane(&lane_path)?;
    let chosen = LaneAlarms {
        lane_id: alarms.lane_id.clone(),
        alarms: order.iter().map(|&i| alarms.alarms[i].clone()).collect(),
        targets: alarms.targets.subset(&order),
    };
    let prepared = prepare_alarms::<T>(&lane, chosen, &[mc.channel])?;
    drop(lane);
    let patches = prepared.patches(mc.channel)?;
    let maps = patches
        .normalized
        .iter()
        .map(|p| confidence_map(p.pixels.view(), dict, &cfg.pipeline.descriptors, &model.classifier))
        .collect::<flgpr_core::Result<Vec<_>>>()?;
    // Percentiles are ranked over every window of every mapped alarm.
    let all: Vec<f64> = maps.iter().flat_map(|m| m.values.iter().copied()).collect();
    let pct = rank_percentiles(&all);

    let dir = layout.confmap_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut index = Vec::new();
    let mut offset = 0;
    for (rank, (m, &alarm)) in maps.iter().zip(&order).enumerate() {
        let (rows, cols) = m.values.dim();
        let cells: Vec<MapCellRow> = (0..rows * cols)
            .map(|i| MapCellRow { row: i / cols, col: i % cols, center_row_px: m.centers_px[i].0, center_col_px: m.centers_px[i].1, value: m.values[[i / cols, i % cols]], percentile: pct[offset + i] })
            .collect();
        let img = Array2::from_shape_fn((rows, cols), |(r, c)| pct[offset + r * cols + c] / 100.0);
        offset += rows * cols;
        write_rows(&cells, &dir.join(format!("alarm-{alarm:04}.csv")))?;
        gray_png(&img, mc.png_scale, &dir.join(format!("alarm-{alarm:04}.png")))?;
        let a = &alarms.alarms[alarm];
        index.push(MapIndexRow {
            rank,
            alarm,
            easting: a.utm.easting,
            northing: a.utm.northing,
            classifier_confidence: confidence[alarm],
            label: if alarms.targets.targets[alarm].is_some() { "hit" } else { "false_alarm" }.into(),
        });
    }
    write_rows(&index, &dir.join("index.csv"))?;
    let atoms = render_dictionary(dict, 1)?;
    gray_png(&atoms.pixels, 4, &dir.join("dictionary.png"))?;
    Ok(format!(
        "confmap: {} alarm maps of lane {} from {} fold {}, dictionary {}×{} → {}",
        maps.len(),
        alarms.lane_id,
        slug(&alg),
        mc.fold,
        atoms.grid.0,
        atoms.grid.1,
        dir.display()
    ))
}
