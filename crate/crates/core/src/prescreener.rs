//! RX anomaly prescreener: per-pixel foreground/background contrast,
//! local-maximum alarm declaration, and DP-means clustering of the
//! multi-look alarms in UTM.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, Frame, Lane};
use crate::error::{Error, Result};
use crate::geometry::{GridGeometry, Utm};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlarmSource {
    Prescreener,
    Classifier,
    Fusion,
}

impl AlarmSource {
    pub fn name(self) -> &'static str {
        match self {
            AlarmSource::Prescreener => "prescreener",
            AlarmSource::Classifier => "classifier",
            AlarmSource::Fusion => "fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub utm: Utm,
    pub confidence: f64,
    pub source: AlarmSource,
    pub cluster_members: usize,
}

impl Alarm {
    pub fn new(utm: Utm, confidence: f64) -> Self {
        Self { utm, confidence, source: AlarmSource::Prescreener, cluster_members: 1 }
    }
}

/// Per-pixel RX statistic λ over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceImage<T> {
    pub values: Array2<T>,
    pub geometry: GridGeometry,
    pub channel: Channel,
    /// Pixels where the background variance vanished (λ set to 0).
    pub degenerate_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrescreenParams {
    pub fore_px: usize,
    pub back_px: usize,
    /// λ threshold for alarm declaration.
    pub min_confidence: f64,
    pub cluster_radius_m: f64,
}

impl Default for PrescreenParams {
    fn default() -> Self {
        Self { fore_px: 40, back_px: 80, min_confidence: 0.05, cluster_radius_m: 1.0 }
    }
}

/// Summed-area table with a zero first row and column.
fn integral(v: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = v.dim();
    let mut s = Array2::<f64>::zeros((rows + 1, cols + 1));
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += v[[r, c]];
            s[[r + 1, c + 1]] = s[[r, c + 1]] + acc;
        }
    }
    s
}

fn box_sum(s: &Array2<f64>, r0: usize, c0: usize, size: usize) -> f64 {
    s[[r0 + size, c0 + size]] - s[[r0, c0 + size]] - s[[r0 + size, c0]] + s[[r0, c0]]
}

/// RX map of a real image: λ = (μ_t − μ_b)² / σ_b².
///
/// The foreground is the `fore×fore` window centered on the pixel (for even
/// sizes the extra row/column lies before the pixel), the background is the
/// `back×back` window minus the foreground. Pixels where the background
/// window does not fit, or where σ_b² vanishes, get λ = 0. Returns the map and
/// the number of vanishing-variance pixels.
pub fn rx_map<T: Real>(image: ArrayView2<'_, T>, fore: usize, back: usize) -> Result<(Array2<T>, usize)> {
    let (rows, cols) = image.dim();
    if fore == 0 || fore >= back {
        return Err(Error::InvalidArgument(format!("need 0 < fore ({fore}) < back ({back})")));
    }
    if rows < back || cols < back {
        return Err(Error::InvalidArgument(format!(
            "image {rows}x{cols} smaller than the {back}x{back} background window"
        )));
    }
    // Centering keeps the summed-area tables small, so offsets in the
    // intensity do not cost precision.
    let mean = image.iter().map(|v| v.f64()).sum::<f64>() / (rows * cols) as f64;
    let centered = image.mapv(|v| v.f64() - mean);
    let s1 = integral(&centered);
    let s2 = integral(&centered.mapv(|v| v * v));

    let hb = back / 2;
    let hf = fore / 2;
    let nf = (fore * fore) as f64;
    let nb = (back * back - fore * fore) as f64;
    let mut out = Array2::<T>::zeros((rows, cols));
    let mut degenerate = 0usize;
    for r in hb..=rows - (back - hb) {
        for c in hb..=cols - (back - hb) {
            let (br, bc) = (r - hb, c - hb);
            let (fr, fc) = (r - hf, c - hf);
            let f1 = box_sum(&s1, fr, fc, fore);
            let f2 = box_sum(&s2, fr, fc, fore);
            let b1 = box_sum(&s1, br, bc, back) - f1;
            let b2 = box_sum(&s2, br, bc, back) - f2;
            let mu_t = f1 / nf;
            let mu_b = b1 / nb;
            let second = b2 / nb;
            let var_b = second - mu_b * mu_b;
            if !(var_b > 1e-9 * second) {
                degenerate += 1;
                continue;
            }
            let d = mu_t - mu_b;
            out[[r, c]] = T::of(d * d / var_b);
        }
    }
    Ok((out, degenerate))
}

/// RX confidence image of a frame's magnitude.
pub fn rx_confidence<T: Real>(frame: &Frame, fore: usize, back: usize) -> Result<ConfidenceImage<T>> {
    let magnitude = frame.pixels.mapv(|p| T::of(f64::from(p.norm())));
    let (values, degenerate_pixels) = rx_map(magnitude.view(), fore, back)?;
    Ok(ConfidenceImage { values, geometry: frame.geometry, channel: frame.channel, degenerate_pixels })
}

/// Alarms at interior pixels strictly greater than all 8 neighbours and at
/// least `min_confidence`.
pub fn local_maxima<T: Real>(conf: &ConfidenceImage<T>, min_confidence: f64) -> Vec<Alarm> {
    let v = &conf.values;
    let (rows, cols) = v.dim();
    let mut alarms = Vec::new();
    if rows < 3 || cols < 3 {
        return alarms;
    }
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let x = v[[r, c]];
            if x.f64() < min_confidence {
                continue;
            }
            let is_max = (r - 1..=r + 1)
                .flat_map(|i| (c - 1..=c + 1).map(move |j| (i, j)))
                .filter(|&(i, j)| (i, j) != (r, c))
                .all(|(i, j)| x > v[[i, j]]);
            if is_max {
                alarms.push(Alarm::new(conf.geometry.pixel_to_utm(r as f64, c as f64), x.f64()));
            }
        }
    }
    alarms
}

/// Outcome of DP-means clustering.
#[derive(Debug, Clone)]
pub struct DpMeans {
    pub centers: Vec<Utm>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Σ‖x − μ‖² + radius²·k after each mean update.
    pub objective: Vec<f64>,
    pub converged: bool,
}

struct CenterGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl CenterGrid {
    fn new(cell: f64) -> Self {
        Self { cell, cells: HashMap::new() }
    }

    fn key(&self, p: &Utm) -> (i64, i64) {
        ((p.easting / self.cell).floor() as i64, (p.northing / self.cell).floor() as i64)
    }

    fn insert(&mut self, idx: usize, p: &Utm) {
        self.cells.entry(self.key(p)).or_default().push(idx);
    }

    /// Nearest center within `radius`; ties go to the lowest index.
    fn nearest(&self, p: &Utm, centers: &[Utm], radius: f64) -> Option<usize> {
        let (ke, kn) = self.key(p);
        let r2 = radius * radius;
        let mut best: Option<(f64, usize)> = None;
        for de in -1..=1 {
            for dn in -1..=1 {
                let Some(list) = self.cells.get(&(ke + de, kn + dn)) else { continue };
                for &i in list {
                    let d = centers[i].distance_sq(p);
                    if d > r2 {
                        continue;
                    }
                    best = match best {
                        Some((bd, bi)) if bd < d || (bd == d && bi < i) => Some((bd, bi)),
                        _ => Some((d, i)),
                    };
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Scan order: descending confidence, ties by UTM (easting, northing).
fn scan_order(alarms: &[Alarm]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alarms.len()).collect();
    order.sort_by(|&a, &b| {
        alarms[b]
            .confidence
            .total_cmp(&alarms[a].confidence)
            .then(alarms[a].utm.lex_cmp(&alarms[b].utm))
    });
    order
}

/// DP-means over alarm locations with cluster-creation distance `radius`.
pub fn dp_means(alarms: &[Alarm], radius: f64, max_iter: usize) -> Result<DpMeans> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("cluster radius must be positive, got {radius}")));
    }
    let n = alarms.len();
    let order = scan_order(alarms);
    let mut centers: Vec<Utm> = Vec::new();
    let mut assign = vec![usize::MAX; n];
    let mut objective = Vec::new();
    let mut converged = n == 0;

    for _ in 0..max_iter.max(1) {
        if n == 0 {
            break;
        }
        let mut grid = CenterGrid::new(radius);
        for (i, c) in centers.iter().enumerate() {
            grid.insert(i, c);
        }
        let mut changed = false;
        for &i in &order {
            let p = alarms[i].utm;
            let k = match grid.nearest(&p, &centers, radius) {
                Some(k) => k,
                None => {
                    centers.push(p);
                    grid.insert(centers.len() - 1, &p);
                    centers.len() - 1
                }
            };
            if assign[i] != k {
                assign[i] = k;
                changed = true;
            }
        }

        // Mean update; empty clusters are dropped and indices compacted.
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for (i, &k) in assign.iter().enumerate() {
            sums[k].0 += alarms[i].utm.easting;
            sums[k].1 += alarms[i].utm.northing;
            sums[k].2 += 1;
        }
        let mut remap = vec![usize::MAX; centers.len()];
        let mut next = Vec::with_capacity(centers.len());
        for (k, &(se, sn, cnt)) in sums.iter().enumerate() {
            if cnt > 0 {
                remap[k] = next.len();
                next.push(Utm::new(se / cnt as f64, sn / cnt as f64));
            }
        }
        for a in assign.iter_mut() {
            *a = remap[*a];
        }
        centers = next;
        let cost: f64 = assign
            .iter()
            .enumerate()
            .map(|(i, &k)| alarms[i].utm.distance_sq(&centers[k]))
            .sum::<f64>()
            + radius * radius * centers.len() as f64;
        objective.push(cost);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(DpMeans { centers, assignments: assign, objective, converged })
}

/// One alarm per DP-means cluster, at the centroid, with the ℓ₂-norm of the
/// member confidences.
pub fn dp_means_cluster(alarms: &[Alarm], radius: f64) -> Result<Vec<Alarm>> {
    let dp = dp_means(alarms, radius, 1000)?;
    if !dp.converged {
        log::warn!("DP-means stopped at the iteration cap");
    }
    let mut energy = vec![0.0; dp.centers.len()];
    let mut members = vec![0usize; dp.centers.len()];
    for (a, &k) in alarms.iter().zip(&dp.assignments) {
        energy[k] += a.confidence * a.confidence;
        members[k] += 1;
    }
    Ok(dp
        .centers
        .iter()
        .zip(energy.iter().zip(&members))
        .map(|(&utm, (&e, &m))| Alarm {
            utm,
            confidence: e.sqrt(),
            source: AlarmSource::Prescreener,
            cluster_members: m,
        })
        .collect())
}

/// Sorts alarms by descending confidence, ties by UTM.
pub fn sort_alarms(alarms: &mut [Alarm]) {
    alarms.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.utm.lex_cmp(&b.utm)));
}

/// Full prescreener over the lane's VV frames.
pub fn prescreen_lane(lane: &Lane, params: &PrescreenParams) -> Result<Vec<Alarm>> {
    if !lane.has_channel(Channel::VV) {
        return Err(Error::MissingChannel(Channel::VV));
    }
    let bounds = lane.bounds();
    let frames: Vec<&Frame> = lane.frames(Channel::VV).collect();
    let per_frame: Vec<Vec<Alarm>> = frames
        .par_iter()
        .map(|f| {
            let conf = rx_confidence::<f64>(f, params.fore_px, params.back_px)?;
            Ok(local_maxima(&conf, params.min_confidence)
                .into_iter()
                .filter(|a| bounds.contains(&a.utm))
                .collect())
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<Alarm> = per_frame.into_iter().flatten().collect();
    let mut clustered = dp_means_cluster(&pooled, params.cluster_radius_m)?;
    sort_alarms(&mut clustered);
    Ok(clustered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    use crate::rng::rng_for;

    fn image_geometry() -> GridGeometry {
        GridGeometry { origin: Utm::new(100.0, 200.0), resolution_m: 0.03 }
    }

    fn conf(values: Array2<f64>) -> ConfidenceImage<f64> {
        ConfidenceImage { values, geometry: image_geometry(), channel: Channel::VV, degenerate_pixels: 0 }
    }

    /// λ at one pixel by direct enumeration of both windows.
    fn rx_brute(img: &Array2<f64>, r: usize, c: usize, fore: usize, back: usize) -> f64 {
        let (hb, hf) = (back / 2, fore / 2);
        let in_fore = |i: usize, j: usize| i + hf >= r && i < r - hf + fore && j + hf >= c && j < c - hf + fore;
        let (mut ft, mut nt) = (0.0, 0.0);
        let mut bg = Vec::new();
        for i in r - hb..r - hb + back {
            for j in c - hb..c - hb + back {
                if in_fore(i, j) {
                    ft += img[[i, j]];
                    nt += 1.0;
                } else {
                    bg.push(img[[i, j]]);
                }
            }
        }
        let mb = bg.iter().sum::<f64>() / bg.len() as f64;
        let vb = bg.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / bg.len() as f64;
        (ft / nt - mb).powi(2) / vb
    }

    #[test]
    fn constant_image_gives_zero_everywhere() {
        let img = Array2::from_elem((100, 100), 0.7);
        let (map, degenerate) = rx_map(img.view(), 40, 80).unwrap();
        assert!(map.iter().all(|&v| v == 0.0));
        assert_eq!(degenerate, 21 * 21);
    }

    #[test]
    fn bright_block_matches_windowed_oracle() {
        let mut rng = rng_for(3, &[]);
        let mut img = Array2::from_shape_simple_fn((100, 100), || rng.random_range(0.5..1.5));
        for i in 45..55 {
            for j in 45..55 {
                img[[i, j]] += 5.0;
            }
        }
        let (map, _) = rx_map(img.view(), 40, 80).unwrap();
        for &(r, c) in &[(50, 50), (45, 52), (40, 60), (59, 41)] {
            let want = rx_brute(&img, r, c, 40, 80);
            assert!((map[[r, c]] - want).abs() <= 1e-12 * want.max(1.0), "{r},{c}: {} vs {want}", map[[r, c]]);
        }
        // Borders where the background window does not fit are zero.
        assert_eq!(map[[39, 50]], 0.0);
        assert_eq!(map[[50, 61]], 0.0);
        assert!(map[[40, 60]] > 0.0);
    }

    #[test]
    fn positive_affine_maps_leave_lambda_unchanged() {
        let mut rng = rng_for(4, &[]);
        let img = Array2::from_shape_simple_fn((96, 96), || rng.random_range(0.0..2.0));
        let (base, _) = rx_map::<f64>(img.view(), 10, 20).unwrap();
        let (scaled, _) = rx_map(img.mapv(|v| 3.5 * v + 7.0).view(), 10, 20).unwrap();
        for (a, b) in base.iter().zip(scaled.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn window_must_fit() {
        let img = Array2::<f64>::zeros((50, 100));
        assert!(rx_map(img.view(), 40, 80).is_err());
        assert!(rx_map(Array2::<f64>::zeros((90, 90)).view(), 80, 40).is_err());
    }

    #[test]
    fn ramp_has_no_local_maxima() {
        let ramp = Array2::from_shape_fn((20, 20), |(r, c)| (r * 20 + c) as f64);
        assert!(local_maxima(&conf(ramp), 0.0).is_empty());
    }

    #[test]
    fn isolated_and_twin_peaks() {
        let mut v = Array2::<f64>::zeros((20, 20));
        v[[7, 9]] = 2.0;
        let a = local_maxima(&conf(v.clone()), 0.5);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].utm, image_geometry().pixel_to_utm(7.0, 9.0));
        assert_eq!(a[0].confidence, 2.0);

        v[[7, 12]] = 2.0;
        assert_eq!(local_maxima(&conf(v.clone()), 0.5).len(), 2);
        // Adjacent equal values form a plateau: neither is strict.
        v[[7, 10]] = 2.0;
        let plateau = local_maxima(&conf(v), 0.5);
        assert_eq!(plateau.len(), 1);
        assert_eq!(plateau[0].utm, image_geometry().pixel_to_utm(7.0, 12.0));
    }

    #[test]
    fn threshold_filters_maxima() {
        let mut v = Array2::<f64>::zeros((10, 10));
        v[[3, 3]] = 0.2;
        v[[6, 6]] = 0.9;
        assert_eq!(local_maxima(&conf(v), 0.5).len(), 1);
    }

    #[test]
    fn close_alarms_merge_with_l2_confidence() {
        let a = [Alarm::new(Utm::new(0.0, 0.0), 3.0), Alarm::new(Utm::new(0.5, 0.0), 4.0)];
        let c = dp_means_cluster(&a, 1.0).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].confidence - 5.0).abs() < 1e-12);
        assert_eq!(c[0].cluster_members, 2);
        assert_eq!(c[0].utm, Utm::new(0.25, 0.0));
    }

    #[test]
    fn distant_alarms_stay_apart() {
        let a = [Alarm::new(Utm::new(0.0, 0.0), 3.0), Alarm::new(Utm::new(2.5, 0.0), 4.0)];
        let mut c = dp_means_cluster(&a, 1.0).unwrap();
        sort_alarms(&mut c);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].confidence, 4.0);
        assert_eq!(c[1].confidence, 3.0);
    }

    #[test]
    fn empty_input_and_bad_radius() {
        assert!(dp_means_cluster(&[], 1.0).unwrap().is_empty());
        assert!(dp_means(&[], 0.0, 10).is_err());
    }

    #[test]
    fn random_clusters_respect_radius_and_objective_decreases() {
        for seed in 0..20 {
            let mut rng = rng_for(seed, &[]);
            let alarms: Vec<Alarm> = (0..50)
                .map(|_| Alarm::new(Utm::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)), rng.random_range(0.1..5.0)))
                .collect();
            let dp = dp_means(&alarms, 1.0, 1000).unwrap();
            assert!(dp.converged);
            for (a, &k) in alarms.iter().zip(&dp.assignments) {
                assert!(a.utm.distance(&dp.centers[k]) <= 1.0 + 1e-12);
            }
            for w in dp.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", dp.objective);
            }
        }
    }
}
