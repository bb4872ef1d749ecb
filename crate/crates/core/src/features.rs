//! Handcrafted patch features: raw pixels, whole-patch SIFT, local statistics,
//! the windowed 2-D FFT quadrant and log-Gabor response statistics.
//!
//! Spectral work is done in `f64` and converted to `T` on output.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use num_complex::{Complex, Complex64};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{ComplexPatch, NormalizedPatch};
use crate::scalar::Real;

/// Every feature the pipeline can produce; the last four are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Raw,
    Sift,
    Lstat,
    Fft2d,
    LogGabor,
    BovRaw,
    BovSift,
    FvRaw,
    FvSift,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 9] = [
        FeatureKind::Raw,
        FeatureKind::Sift,
        FeatureKind::Lstat,
        FeatureKind::Fft2d,
        FeatureKind::LogGabor,
        FeatureKind::BovRaw,
        FeatureKind::BovSift,
        FeatureKind::FvRaw,
        FeatureKind::FvSift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Raw => "raw",
            FeatureKind::Sift => "sift",
            FeatureKind::Lstat => "lstat",
            FeatureKind::Fft2d => "fft2d",
            FeatureKind::LogGabor => "loggabor",
            FeatureKind::BovRaw => "bov-raw",
            FeatureKind::BovSift => "bov-sift",
            FeatureKind::FvRaw => "fv-raw",
            FeatureKind::FvSift => "fv-sift",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, FeatureKind::BovRaw | FeatureKind::BovSift | FeatureKind::FvRaw | FeatureKind::FvSift)
    }

    /// Dimension of a handcrafted feature on a 100×100 patch with the
    /// default log-Gabor bank; learned dimensions depend on the codebook size.
    pub fn handcrafted_dim(self) -> Option<usize> {
        match self {
            FeatureKind::Raw => Some(10_000),
            FeatureKind::Sift => Some(128),
            FeatureKind::Lstat => Some(18),
            FeatureKind::Fft2d => Some(2_500),
            FeatureKind::LogGabor => Some(1_620),
            _ => None,
        }
    }

    /// Dimension including learned kinds, for a codebook of `k` words over
    /// 2×2 pooling (BOV: 4K, FV: 8DK).
    pub fn dim(self, k: usize) -> usize {
        match self {
            FeatureKind::BovRaw | FeatureKind::BovSift => 4 * k,
            FeatureKind::FvRaw => 8 * 121 * k,
            FeatureKind::FvSift => 8 * 128 * k,
            other => other.handcrafted_dim().unwrap_or(0),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' ', '(', ')'], "-");
        let key = key.trim_matches('-');
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == key || k.name().replace('-', "") == key.replace('-', ""))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Array1<T>,
    pub kind: FeatureKind,
}

impl<T: Real> FeatureVector<T> {
    pub fn new(kind: FeatureKind, values: Array1<T>) -> Self {
        Self { values, kind }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Edges of a near-equal `g`-way partition of `n`: ⌈k·n/g⌉, so 100 splits
/// into {0, 34, 67, 100}.
pub fn grid_edges(n: usize, g: usize) -> Vec<usize> {
    (0..=g).map(|k| (k * n).div_ceil(g)).collect()
}

/// Row-major 3×3 (or `g`×`g`) regions as (row range, col range).
fn regions(rows: usize, cols: usize, g: usize) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let (re, ce) = (grid_edges(rows, g), grid_edges(cols, g));
    let mut out = Vec::with_capacity(g * g);
    for a in 0..g {
        for b in 0..g {
            out.push((re[a]..re[a + 1], ce[b]..ce[b + 1]));
        }
    }
    out
}

pub fn feat_raw<T: Real>(xp: &NormalizedPatch<T>) -> FeatureVector<T> {
    FeatureVector::new(FeatureKind::Raw, xp.pixels.iter().copied().collect())
}

/// Symmetric (edge-repeating) boundary index.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i - 1) as usize
    } else if i as usize >= n {
        2 * n - 1 - i as usize
    } else {
        i as usize
    }
}

/// Central-difference gradient (magnitude, orientation in degrees [0, 360)).
/// Orientation is atan2 of the column difference over the row difference.
pub fn gradients<T: Real>(img: ArrayView2<'_, T>) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = img.dim();
    let at = |r: isize, c: isize| img[[reflect(r, rows), reflect(c, cols)]].f64();
    let mut mag = Array2::zeros((rows, cols));
    let mut ori = Array2::zeros((rows, cols));
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let dr = at(r + 1, c) - at(r - 1, c);
            let dc = at(r, c + 1) - at(r, c - 1);
            let mut theta = dc.atan2(dr).to_degrees();
            if theta < 0.0 {
                theta += 360.0;
            }
            mag[[r as usize, c as usize]] = (dr * dr + dc * dc).sqrt();
            ori[[r as usize, c as usize]] = theta;
        }
    }
    (mag, ori)
}

/// 4×4 cells × 8 orientation bins of 45°, magnitude weighted, cells
/// row-major, bins ascending. No spatial weighting or normalization.
pub fn sift_descriptor<T: Real>(img: ArrayView2<'_, T>) -> Array1<T> {
    let (rows, cols) = img.dim();
    debug_assert!(rows >= 4 && cols >= 4);
    let (mag, ori) = gradients(img);
    let (re, ce) = (grid_edges(rows, 4), grid_edges(cols, 4));
    let cell_of = |edges: &[usize], i: usize| edges[1..].iter().position(|&e| i < e).unwrap_or(3);
    let mut hist = vec![0.0f64; 128];
    for r in 0..rows {
        let cr = cell_of(&re, r);
        for c in 0..cols {
            let m = mag[[r, c]];
            if m == 0.0 {
                continue;
            }
            let bin = ((ori[[r, c]] / 45.0) as usize).min(7);
            hist[(cr * 4 + cell_of(&ce, c)) * 8 + bin] += m;
        }
    }
    hist.into_iter().map(T::of).collect()
}

pub fn feat_sift<T: Real>(xp: &NormalizedPatch<T>) -> FeatureVector<T> {
    FeatureVector::new(FeatureKind::Sift, sift_descriptor(xp.pixels.view()))
}

/// Population mean and variance.
fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn feat_lstat<T: Real>(xp: &NormalizedPatch<T>) -> FeatureVector<T> {
    let (rows, cols) = xp.pixels.dim();
    let mut out = Vec::with_capacity(18);
    for (rr, cr) in regions(rows, cols, 3) {
        let block = xp.pixels.slice(s![rr, cr]);
        let (m, v) = mean_var(block.iter().map(|x| x.f64()));
        out.push(T::of(m));
        out.push(T::of(v));
    }
    FeatureVector::new(FeatureKind::Lstat, Array1::from(out))
}

/// Separable 2-D FFT over a fixed shape.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    /// Unnormalized in both directions; callers divide by rows·cols after
    /// an inverse transform.
    pub fn process(&self, data: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(data.dim(), (self.rows, self.cols));
        let (rf, cf) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        for mut row in data.rows_mut() {
            let mut buf: Vec<Complex64> = row.to_vec();
            rf.process(&mut buf);
            row.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
        }
        for mut col in data.columns_mut() {
            let mut buf: Vec<Complex64> = col.to_vec();
            cf.process(&mut buf);
            col.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
        }
    }
}

/// Symmetric N-point Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// |FFT₂D(Re(H ∘ X))| restricted to the non-negative-frequency quadrant
/// (rows and columns 0..n/2 of the unshifted transform), row-major.
/// `window = false` skips H.
pub fn fft2d_quadrant<T: Real>(x: &Array2<Complex<T>>, window: bool) -> Array1<T> {
    let (rows, cols) = x.dim();
    let (hr, hc) = if window { (hamming(rows), hamming(cols)) } else { (vec![1.0; rows], vec![1.0; cols]) };
    let mut data = Array2::from_shape_fn((rows, cols), |(r, c)| Complex64::new(hr[r] * hc[c] * x[[r, c]].re.f64(), 0.0));
    Fft2::new(rows, cols).process(&mut data, false);
    data.slice(s![..rows / 2, ..cols / 2]).iter().map(|v| T::of(v.norm())).collect()
}

pub fn feat_fft2d<T: Real>(x: &ComplexPatch<T>) -> FeatureVector<T> {
    FeatureVector::new(FeatureKind::Fft2d, fft2d_quadrant(&x.pixels, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogGaborParams {
    pub scales: usize,
    pub orientations: usize,
    /// λ of the finest scale, in pixels.
    pub min_wavelength_px: f64,
    /// Wavelength ratio between successive scales.
    pub scale_mult: f64,
    /// σ_f / f₀ of the radial log-Gaussian.
    pub sigma_on_f: f64,
    /// Orientation spacing over angular σ.
    pub d_theta_on_sigma: f64,
}

impl Default for LogGaborParams {
    fn default() -> Self {
        Self { scales: 6, orientations: 6, min_wavelength_px: 3.0, scale_mult: 2.0, sigma_on_f: 0.65, d_theta_on_sigma: 1.2 }
    }
}

/// Frequency-domain filters in unshifted FFT layout, scale-major then
/// orientation. Columns carry the horizontal frequency `fx`.
#[derive(Debug, Clone)]
pub struct LogGaborBank {
    pub params: LogGaborParams,
    pub filters: Vec<Array2<f64>>,
    fft: Fft2,
}

/// Signed normalized frequency of FFT bin `k` of `n`, in cycles/pixel.
fn bin_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

impl LogGaborBank {
    pub fn new(rows: usize, cols: usize, params: LogGaborParams) -> Self {
        let sigma_theta = (PI / params.orientations as f64) / params.d_theta_on_sigma;
        let log_bw = params.sigma_on_f.ln();
        let mut filters = Vec::with_capacity(params.scales * params.orientations);
        for s in 0..params.scales {
            let f0 = 1.0 / (params.min_wavelength_px * params.scale_mult.powi(s as i32));
            for o in 0..params.orientations {
                let angle = o as f64 * PI / params.orientations as f64;
                filters.push(Array2::from_shape_fn((rows, cols), |(r, c)| {
                    let (fy, fx) = (bin_freq(r, rows), bin_freq(c, cols));
                    let f = fx.hypot(fy);
                    if f == 0.0 {
                        return 0.0;
                    }
                    let radial = (-(f / f0).ln().powi(2) / (2.0 * log_bw * log_bw)).exp();
                    let d = fy.atan2(fx) - angle;
                    let dtheta = d.sin().atan2(d.cos());
                    radial * (-(dtheta * dtheta) / (2.0 * sigma_theta * sigma_theta)).exp()
                }));
            }
        }
        Self { params, filters, fft: Fft2::new(rows, cols) }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// |IFFT(FFT(x) ∘ filter)| for every filter.
    pub fn responses<T: Real>(&self, x: ArrayView2<'_, T>) -> Vec<Array2<f64>> {
        let (rows, cols) = x.dim();
        let vals: Vec<f64> = x.iter().map(|v| v.f64()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let spread = vals.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
        // A constant input has no energy outside DC, where every filter is 0.
        if spread <= 1e-12 * mean.abs().max(1.0) {
            return vec![Array2::zeros((rows, cols)); self.len()];
        }
        let mut spec = Array2::from_shape_vec((rows, cols), vals.into_iter().map(|v| Complex64::new(v - mean, 0.0)).collect())
            .expect("shape preserved");
        self.fft.process(&mut spec, false);
        let scale = 1.0 / (rows * cols) as f64;
        self.filters
            .iter()
            .map(|h| {
                let mut y = &spec * &h.mapv(|g| Complex64::new(g, 0.0));
                self.fft.process(&mut y, true);
                y.mapv(|v| v.norm() * scale)
            })
            .collect()
    }
}

impl Default for LogGaborBank {
    fn default() -> Self {
        build_log_gabor_bank()
    }
}

pub fn build_log_gabor_bank() -> LogGaborBank {
    LogGaborBank::new(crate::patch::PATCH_SIZE, crate::patch::PATCH_SIZE, LogGaborParams::default())
}

/// {mean, variance, kurtosis, skewness, ℓ₂-norm}, population moments;
/// kurtosis is non-excess. Both shape moments are 0 for a flat region.
pub fn region_stats(xs: &[f64]) -> [f64; 5] {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for &v in xs {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        sq += v * v;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (kurt, skew) = if m2 <= 1e-18 * mean.abs().max(1.0).powi(2) { (0.0, 0.0) } else { (m4 / (m2 * m2), m3 / m2.powf(1.5)) };
    [mean, m2, kurt, skew, sq.sqrt()]
}

pub fn feat_loggabor<T: Real>(xp: &NormalizedPatch<T>, bank: &LogGaborBank) -> FeatureVector<T> {
    let (rows, cols) = xp.pixels.dim();
    let regs = regions(rows, cols, 3);
    let mut out = Vec::with_capacity(bank.len() * regs.len() * 5);
    for resp in bank.responses(xp.pixels.view()) {
        for (rr, cr) in &regs {
            let block: Vec<f64> = resp.slice(s![rr.clone(), cr.clone()]).iter().copied().collect();
            out.extend(region_stats(&block).map(T::of));
        }
    }
    FeatureVector::new(FeatureKind::LogGabor, Array1::from(out))
}

/// Everything a handcrafted extractor may need for one alarm.
pub struct PatchInputs<'a, T> {
    pub complex: &'a ComplexPatch<T>,
    pub normalized: &'a NormalizedPatch<T>,
}

/// Dispatch for the five handcrafted kinds.
pub fn extract_handcrafted<T: Real>(kind: FeatureKind, p: &PatchInputs<'_, T>, bank: &LogGaborBank) -> Result<FeatureVector<T>> {
    Ok(match kind {
        FeatureKind::Raw => feat_raw(p.normalized),
        FeatureKind::Sift => feat_sift(p.normalized),
        FeatureKind::Lstat => feat_lstat(p.normalized),
        FeatureKind::Fft2d => feat_fft2d(p.complex),
        FeatureKind::LogGabor => feat_loggabor(p.normalized, bank),
        learned => return Err(Error::InvalidArgument(format!("{learned} needs a fitted codebook"))),
    })
}

/// Stacks feature vectors as rows.
pub fn stack<T: Real>(rows: &[FeatureVector<T>]) -> Result<Array2<T>> {
    let d = rows.first().map_or(0, |r| r.dim());
    let mut m = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        if r.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.dim() });
        }
        m.row_mut(i).assign(&r.values);
    }
    Ok(m)
}

/// Elementwise check used by tests and artifact validation.
pub fn all_finite<T: Real>(m: &Array2<T>) -> bool {
    let mut ok = true;
    Zip::from(m).for_each(|v| ok &= v.is_finite());
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Channel;
    use crate::geometry::Utm;
    use crate::patch::normalize_magnitudes;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn normalized(pixels: Array2<f64>) -> NormalizedPatch<f64> {
        NormalizedPatch { pixels, bg_mean: 0.0, bg_std: 1.0, degenerate: false }
    }

    fn complex(pixels: Array2<Complex<f64>>) -> ComplexPatch<f64> {
        ComplexPatch { pixels, center_utm: Utm::default(), channel: Channel::HH, resolution_m: 0.03 }
    }

    fn random(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = rng_for(seed, &[]);
        Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
        }
        assert_eq!("FV(SIFT)".parse::<FeatureKind>().unwrap(), FeatureKind::FvSift);
        assert_eq!(FeatureKind::FvSift.dim(30), 30_720);
        assert_eq!(FeatureKind::FvRaw.dim(30), 29_040);
        assert_eq!(FeatureKind::BovRaw.dim(30), 120);
    }

    #[test]
    fn grid_edges_split_100_three_ways() {
        assert_eq!(grid_edges(100, 3), vec![0, 34, 67, 100]);
        assert_eq!(grid_edges(100, 4), vec![0, 25, 50, 75, 100]);
        let total: usize = regions(100, 100, 3).iter().map(|(r, c)| r.len() * c.len()).sum();
        assert_eq!(total, 10_000);
    }

    #[test]
    fn raw_is_row_major() {
        let mut x = Array2::zeros((100, 100));
        assert!(feat_raw(&normalized(x.clone())).values.iter().all(|&v| v == 0.0));
        x[[0, 1]] = 7.0;
        let f = feat_raw(&normalized(x));
        assert_eq!(f.dim(), 10_000);
        assert_eq!(f.values[1], 7.0);
    }

    proptest! {
        #[test]
        fn raw_reshape_is_identity(seed in any::<u64>()) {
            let x = random(seed, 100);
            let f = feat_raw(&normalized(x.clone()));
            let back = f.values.into_shape_with_order((100, 100)).unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn sift_constant_is_zero() {
        let f = sift_descriptor(Array2::from_elem((100, 100), 3.5).view());
        assert_eq!(f.len(), 128);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sift_rotation_shifts_bins_and_permutes_cells() {
        let n = 100;
        let x = random(3, n);
        // Counter-clockwise: rot[i][j] = x[j][n-1-i].
        let rot = Array2::from_shape_fn((n, n), |(i, j)| x[[j, n - 1 - i]]);
        let hx = sift_descriptor(x.view());
        let hr = sift_descriptor(rot.view());
        for a in 0..4 {
            for b in 0..4 {
                for bin in 0..8 {
                    let got = hr[(a * 4 + b) * 8 + bin];
                    let want = hx[(b * 4 + (3 - a)) * 8 + (bin + 6) % 8];
                    assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "cell ({a},{b}) bin {bin}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn sift_step_edge_lands_in_zero_and_180_bins() {
        // Rows below 50 dark, from 50 on bright: gradients point along +row.
        let x = Array2::from_shape_fn((100, 100), |(r, _)| if r >= 50 { 1.0 } else { 0.0 });
        let h = sift_descriptor(x.view());
        let total: f64 = h.iter().sum();
        let mass: f64 = (0..16).map(|c| h[c * 8] + h[c * 8 + 4]).sum();
        assert!(total > 0.0);
        assert_eq!(mass, total);
        // Two rows straddle the edge, each with |dr| = 1, over 100 columns.
        assert_eq!(total, 200.0);
        let inverted = sift_descriptor(x.mapv(|v| 1.0 - v).view());
        assert_eq!((0..16).map(|c| inverted[c * 8 + 4]).sum::<f64>(), 200.0);
    }

    #[test]
    fn lstat_matches_brute_force() {
        let x = Array2::from_shape_fn((100, 100), |(r, c)| (r * 100 + c) as f64 * 0.01 + ((r * c) % 7) as f64);
        let f = feat_lstat(&normalized(x.clone()));
        let e = [0, 34, 67, 100];
        for a in 0..3 {
            for b in 0..3 {
                let mut v = Vec::new();
                for r in e[a]..e[a + 1] {
                    for c in e[b]..e[b + 1] {
                        v.push(x[[r, c]]);
                    }
                }
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / v.len() as f64;
                let i = a * 3 + b;
                assert!((f.values[2 * i] - mean).abs() < 1e-12);
                assert!((f.values[2 * i + 1] - var).abs() < 1e-12 * var.max(1.0));
            }
        }
        let c = feat_lstat(&normalized(Array2::from_elem((100, 100), 2.5)));
        for i in 0..9 {
            assert_eq!((c.values[2 * i], c.values[2 * i + 1]), (2.5, 0.0));
        }
    }

    #[test]
    fn fft_impulse_without_window_is_flat() {
        let mut x = Array2::from_elem((100, 100), Complex::new(0.0f64, 0.0));
        x[[0, 0]] = Complex::new(1.0, 5.0);
        let q = fft2d_quadrant(&x, false);
        assert_eq!(q.len(), 2500);
        assert!(q.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let zero = feat_fft2d(&complex(Array2::from_elem((100, 100), Complex::new(0.0, 0.0))));
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let n = 100;
        let mut rng = rng_for(17, &[]);
        let x = Array2::from_shape_simple_fn((n, n), || Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let got = feat_fft2d(&complex(x.clone()));
        let h = hamming(n);
        let real = Array2::from_shape_fn((n, n), |(r, c)| h[r] * h[c] * x[[r, c]].re);
        // Naive 2-D DFT, evaluated as the full double sum per output bin.
        let tw: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
        let mut worst = 0.0f64;
        for u in 0..n / 2 {
            for v in 0..n / 2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        acc += real[[r, c]] * tw[(u * r + v * c) % n];
                    }
                }
                let g = got.values[u * (n / 2) + v];
                worst = worst.max((g - acc.norm()).abs() / acc.norm().max(1e-300));
            }
        }
        assert!(worst < 1e-8, "worst relative error {worst}");
    }

    #[test]
    fn hamming_endpoints() {
        let h = hamming(100);
        assert!((h[0] - 0.08).abs() < 1e-15 && (h[99] - 0.08).abs() < 1e-15);
        assert!((h[49] - h[50]).abs() < 1e-15);
    }

    #[test]
    fn log_gabor_bank_shape_and_dc() {
        let bank = build_log_gabor_bank();
        assert_eq!(bank.len(), 36);
        assert!(bank.filters.iter().all(|f| f.dim() == (100, 100) && f[[0, 0]] == 0.0));
    }

    #[test]
    fn log_gabor_constant_patch_is_zero() {
        let bank = build_log_gabor_bank();
        for c in [0.0, 3.0, -1.7] {
            let f = feat_loggabor(&normalized(Array2::from_elem((100, 100), c)), &bank);
            assert_eq!(f.dim(), 1620);
            assert!(f.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn log_gabor_prefers_matching_scale() {
        let bank = build_log_gabor_bank();
        let p = bank.params;
        for s in 0..p.scales {
            for o in [0, 2, 4] {
                let lambda = p.min_wavelength_px * p.scale_mult.powi(s as i32);
                let angle = o as f64 * PI / p.orientations as f64;
                let x = Array2::from_shape_fn((100, 100), |(r, c)| {
                    (2.0 * PI / lambda * (c as f64 * angle.cos() + r as f64 * angle.sin())).cos()
                });
                let norms: Vec<f64> = bank.responses(x.view()).iter().map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
                let own = norms[s * p.orientations + o];
                for far in [s.checked_sub(2), Some(s + 2)].into_iter().flatten().filter(|&t| t < p.scales) {
                    for oo in 0..p.orientations {
                        assert!(own > norms[far * p.orientations + oo], "scale {s} orient {o} vs scale {far}");
                    }
                }
            }
        }
    }

    #[test]
    fn region_stats_direct() {
        let xs = [1.0, 2.0, 2.0, 7.0];
        let [m, v, k, sk, l2] = region_stats(&xs);
        assert_eq!(m, 3.0);
        assert_eq!(v, (4.0 + 1.0 + 1.0 + 16.0) / 4.0);
        assert!((k - ((16.0 + 1.0 + 1.0 + 256.0) / 4.0) / (v * v)).abs() < 1e-12);
        assert!((sk - ((-8.0 - 1.0 - 1.0 + 64.0) / 4.0) / v.powf(1.5)).abs() < 1e-12);
        assert!((l2 - 58f64.sqrt()).abs() < 1e-12);
        assert_eq!(region_stats(&[4.0; 9])[2..4], [0.0, 0.0]);
    }

    #[test]
    fn handcrafted_dims_on_a_real_patch() {
        let mut rng = rng_for(8, &[]);
        let cx = complex(Array2::from_shape_simple_fn((100, 100), || Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
        let xp = normalize_magnitudes(cx.pixels.mapv(|p| p.norm()).view(), 50);
        let bank = build_log_gabor_bank();
        let inputs = PatchInputs { complex: &cx, normalized: &xp };
        for kind in FeatureKind::ALL.into_iter().filter(|k| !k.is_learned()) {
            let f = extract_handcrafted(kind, &inputs, &bank).unwrap();
            assert_eq!(Some(f.dim()), kind.handcrafted_dim());
            assert!(f.is_finite());
        }
        assert!(extract_handcrafted(FeatureKind::BovRaw, &inputs, &bank).is_err());
    }

    #[test]
    fn f32_features_track_f64() {
        let x = random(2, 100);
        let a: FeatureVector<f64> = feat_lstat(&normalized(x.clone()));
        let b = feat_lstat(&NormalizedPatch { pixels: x.mapv(|v| v as f32), bg_mean: 0.0, bg_std: 1.0, degenerate: false });
        for (u, v) in a.values.iter().zip(b.values.iter()) {
            assert!((u - f64::from(*v)).abs() < 1e-5);
        }
    }
}
