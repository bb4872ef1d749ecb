//! Learned encodings: dense local descriptors, ZCA whitening, spherical
//! k-means dictionaries with max-pooled bag-of-visual-words encoding, and
//! diagonal GMM codebooks with Fisher-vector encoding.
//!
//! Both encodings pool over a 2×2 grid of patch quadrants; a descriptor
//! belongs to the quadrant holding its center pixel, with centers on the
//! midline going to the lower index. Fitting runs in `f64` internally.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sift_descriptor, FeatureKind, FeatureVector};
use crate::record::{RecordReader, RecordWriter};
use crate::rng::rng_for;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorKind {
    Raw,
    Sift,
}

impl DescriptorKind {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Raw => "raw",
            DescriptorKind::Sift => "sift",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            DescriptorKind::Raw => 0,
            DescriptorKind::Sift => 1,
        }
    }

    pub(crate) fn from_tag(t: u64) -> Result<Self> {
        match t {
            0 => Ok(DescriptorKind::Raw),
            1 => Ok(DescriptorKind::Sift),
            _ => Err(Error::Format(format!("unknown descriptor tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorParams {
    pub raw_window: usize,
    pub raw_stride: usize,
    pub sift_window: usize,
    pub sift_stride: usize,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self { raw_window: 11, raw_stride: 7, sift_window: 8, sift_stride: 8 }
    }
}

impl DescriptorParams {
    pub fn window_stride(&self, kind: DescriptorKind) -> (usize, usize) {
        match kind {
            DescriptorKind::Raw => (self.raw_window, self.raw_stride),
            DescriptorKind::Sift => (self.sift_window, self.sift_stride),
        }
    }

    pub fn dim(&self, kind: DescriptorKind) -> usize {
        match kind {
            DescriptorKind::Raw => self.raw_window * self.raw_window,
            DescriptorKind::Sift => 128,
        }
    }
}

/// Windows per axis: 1 + ⌊(n − w)/stride⌋.
pub fn grid_count(n: usize, window: usize, stride: usize) -> usize {
    if n < window {
        0
    } else {
        1 + (n - window) / stride
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet<T> {
    /// T×D, row-major over the window grid.
    pub descriptors: Array2<T>,
    /// Window center (row, col) in patch pixel coordinates.
    pub centers_px: Vec<(f64, f64)>,
    pub kind: DescriptorKind,
    /// Window grid (rows, cols).
    pub grid: (usize, usize),
    /// Source patch (rows, cols).
    pub patch_dim: (usize, usize),
}

impl<T: Real> DescriptorSet<T> {
    pub fn len(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pooling quadrant of each descriptor, row-major.
    pub fn quadrants(&self) -> Vec<usize> {
        self.centers_px.iter().map(|&c| quadrant(c, self.patch_dim)).collect()
    }
}

/// 2×2 pooling cell of a pixel position; the midline goes to the lower index.
pub fn quadrant((r, c): (f64, f64), (rows, cols): (usize, usize)) -> usize {
    let qr = usize::from(r > rows as f64 / 2.0);
    let qc = usize::from(c > cols as f64 / 2.0);
    2 * qr + qc
}

pub fn dense_descriptors<T: Real>(img: ArrayView2<'_, T>, kind: DescriptorKind, params: &DescriptorParams) -> DescriptorSet<T> {
    let (rows, cols) = img.dim();
    let (w, stride) = params.window_stride(kind);
    let (gr, gc) = (grid_count(rows, w, stride), grid_count(cols, w, stride));
    let d = params.dim(kind);
    let mut descriptors = Array2::zeros((gr * gc, d));
    let mut centers_px = Vec::with_capacity(gr * gc);
    let half = (w as f64 - 1.0) / 2.0;
    for a in 0..gr {
        for b in 0..gc {
            let (r0, c0) = (a * stride, b * stride);
            let win = img.slice(s![r0..r0 + w, c0..c0 + w]);
            let mut row = descriptors.row_mut(a * gc + b);
            match kind {
                DescriptorKind::Raw => row.iter_mut().zip(win.iter()).for_each(|(o, &v)| *o = v),
                DescriptorKind::Sift => row.assign(&sift_descriptor(win)),
            }
            centers_px.push((r0 as f64 + half, c0 as f64 + half));
        }
    }
    DescriptorSet { descriptors, centers_px, kind, grid: (gr, gc), patch_dim: (rows, cols) }
}

fn to_f64<T: Real>(x: ArrayView2<'_, T>) -> Array2<f64> {
    x.mapv(|v| v.f64())
}

fn check_finite<T: Real>(x: ArrayView2<'_, T>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZcaEpsilon {
    /// ε as a multiple of the mean covariance eigenvalue.
    RelativeToMeanEigenvalue(f64),
    Absolute(f64),
}

impl Default for ZcaEpsilon {
    fn default() -> Self {
        ZcaEpsilon::RelativeToMeanEigenvalue(1e-2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform<T> {
    pub mean: Array1<T>,
    /// (Σ + εI)^(−1/2), symmetric.
    pub projection: Array2<T>,
    /// (Σ + εI)^(1/2), for un-whitening.
    pub inverse: Array2<T>,
    /// Resolved absolute ε.
    pub epsilon: f64,
}

/// Sample covariance (T − 1 denominator) of the rows.
fn covariance(x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let xc = x - &mean;
    let cov = xc.t().dot(&xc) / (n as f64 - 1.0);
    (mean, cov)
}

pub fn zca_fit<T: Real>(desc: ArrayView2<'_, T>, epsilon: ZcaEpsilon) -> Result<ZcaTransform<T>> {
    let (n, d) = desc.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("ZCA needs at least 2 descriptors, got {n}")));
    }
    check_finite(desc, "ZCA input")?;
    let (mean, cov) = covariance(&to_f64(desc));
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let eps = match epsilon {
        ZcaEpsilon::RelativeToMeanEigenvalue(r) => r * lambdas.iter().sum::<f64>() / d as f64,
        ZcaEpsilon::Absolute(e) => e,
    };
    if lambdas.iter().any(|&l| l + eps <= 0.0) {
        return Err(Error::Singular("ZCA covariance has a null direction and ε = 0".into()));
    }
    let v = &eig.eigenvectors;
    let build = |pow: f64| {
        Array2::from_shape_fn((d, d), |(i, j)| {
            (0..d).map(|k| v[(i, k)] * (lambdas[k] + eps).powf(pow) * v[(j, k)]).sum::<f64>()
        })
    };
    let (p, inv) = (build(-0.5), build(0.5));
    // Exact symmetry, independent of summation order.
    let sym = |m: Array2<f64>| Array2::from_shape_fn((d, d), |(i, j)| T::of(0.5 * (m[[i, j]] + m[[j, i]])));
    Ok(ZcaTransform { mean: mean.mapv(T::of), projection: sym(p), inverse: sym(inv), epsilon: eps })
}

impl<T: Real> ZcaTransform<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Rows of `desc` centered and projected.
    pub fn apply(&self, desc: ArrayView2<'_, T>) -> Array2<T> {
        (&desc - &self.mean).dot(&self.projection)
    }

    pub fn unwhiten(&self, y: ArrayView1<'_, T>) -> Array1<T> {
        y.dot(&self.inverse) + &self.mean
    }

    fn write<W: Write>(&self, w: &mut RecordWriter<W>) -> Result<()> {
        w.f64(self.epsilon)?;
        w.vector(self.mean.view())?;
        w.matrix(self.projection.view())?;
        w.matrix(self.inverse.view())
    }

    fn read<R: Read>(r: &mut RecordReader<R>) -> Result<Self> {
        let epsilon = r.f64()?;
        Ok(Self { epsilon, mean: r.vector()?, projection: r.matrix()?, inverse: r.matrix()? })
    }
}

pub fn zca_apply<T: Real>(t: &ZcaTransform<T>, desc: ArrayView2<'_, T>) -> Array2<T> {
    t.apply(desc)
}

/// Rows scaled to unit ℓ₂ norm; zero rows stay zero.
pub fn normalize_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SphericalKmeans {
    /// K×D, unit rows.
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Σ_t max_k 𝒟_k·x_t after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Clusters reseeded because they emptied.
    pub reseeds: usize,
}

fn assign(x: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let sims = x.dot(&centers.t());
    sims.rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::NEG_INFINITY);
            for (k, &s) in row.iter().enumerate() {
                if s > best.1 {
                    best = (k, s);
                }
            }
            best
        })
        .unzip()
}

/// Spherical k-means on row-normalized copies of `x`; initial centers are
/// `k` distinct rows drawn by `seed`.
pub fn spherical_kmeans_f64(x: &Array2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<SphericalKmeans> {
    let (n, d) = x.dim();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("spherical k-means needs T ≥ K ≥ 1 (T = {n}, K = {k})")));
    }
    let mut xn = x.clone();
    normalize_rows(&mut xn);
    let mut rng = rng_for(seed, &[0x5EED_4B4D]);
    let mut init: Vec<usize> = sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centers = Array2::zeros((k, d));
    for (c, &i) in init.iter().enumerate() {
        centers.row_mut(c).assign(&xn.row(i));
    }
    let (mut assignments, mut sims) = assign(&xn, &centers);
    let mut trace = vec![sims.iter().sum()];
    let (mut converged, mut iterations, mut reseeds) = (false, 0, 0);
    while iterations < max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (t, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += &xn.row(t);
        }
        // Farthest descriptors, most dissimilar first, reseed empty clusters.
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for c in 0..k {
            if counts[c] == 0 {
                let t = far.next().expect("n ≥ k");
                centers.row_mut(c).assign(&xn.row(t));
                reseeds += 1;
                continue;
            }
            let norm = sums.row(c).dot(&sums.row(c)).sqrt();
            if norm > 0.0 {
                centers.row_mut(c).assign(&(&sums.row(c) / norm));
            }
        }
        let (next, next_sims) = assign(&xn, &centers);
        trace.push(next_sims.iter().sum());
        let same = next == assignments;
        assignments = next;
        sims = next_sims;
        if same {
            converged = true;
            break;
        }
    }
    Ok(SphericalKmeans { centers, assignments, objective_trace: trace, iterations, converged, reseeds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BovParams {
    pub k: usize,
    pub epsilon: ZcaEpsilon,
    pub max_iter: usize,
}

impl Default for BovParams {
    fn default() -> Self {
        Self { k: 30, epsilon: ZcaEpsilon::default(), max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BovDictionary<T> {
    /// K×D, unit rows, in whitened space.
    pub atoms: Array2<T>,
    pub zca: ZcaTransform<T>,
    pub kind: DescriptorKind,
}

impl<T: Real> BovDictionary<T> {
    pub fn k(&self) -> usize {
        self.atoms.nrows()
    }

    /// Whitened, ℓ₂-normalized descriptors.
    pub fn prepare(&self, desc: ArrayView2<'_, T>) -> Array2<f64> {
        let mut w = to_f64(self.zca.apply(desc).view());
        normalize_rows(&mut w);
        w
    }

    /// γ_t(k) = 𝒟_k·x̃_t, T×K.
    pub fn similarities(&self, desc: ArrayView2<'_, T>) -> Array2<f64> {
        self.prepare(desc).dot(&to_f64(self.atoms.view()).t())
    }
}

/// ZCA fit on `desc` followed by spherical k-means in the whitened space.
pub fn spherical_kmeans<T: Real>(desc: ArrayView2<'_, T>, kind: DescriptorKind, params: &BovParams, seed: u64) -> Result<BovDictionary<T>> {
    let zca = zca_fit(desc, params.epsilon)?;
    let white = to_f64(zca.apply(desc).view());
    let km = spherical_kmeans_f64(&white, params.k, seed, params.max_iter)?;
    Ok(BovDictionary { atoms: km.centers.mapv(T::of), zca, kind })
}

/// A pooled encoding plus the quadrants that held no descriptors (their
/// block is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<T> {
    pub feature: FeatureVector<T>,
    pub empty_quadrants: Vec<usize>,
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Max-pooled similarities per quadrant, quadrants row-major → 4K values.
pub fn bov_encode<T: Real>(ds: &DescriptorSet<T>, dict: &BovDictionary<T>) -> Result<Encoded<T>> {
    check_dim(dict.zca.dim(), ds.descriptors.ncols())?;
    let k = dict.k();
    let gamma = dict.similarities(ds.descriptors.view());
    let mut out = vec![f64::NEG_INFINITY; 4 * k];
    for (t, q) in ds.quadrants().into_iter().enumerate() {
        for j in 0..k {
            let slot = &mut out[q * k + j];
            *slot = slot.max(gamma[[t, j]]);
        }
    }
    let empty_quadrants: Vec<usize> = (0..4).filter(|&q| out[q * k].is_infinite()).collect();
    for &q in &empty_quadrants {
        out[q * k..(q + 1) * k].fill(0.0);
    }
    let kind = match dict.kind {
        DescriptorKind::Raw => FeatureKind::BovRaw,
        DescriptorKind::Sift => FeatureKind::BovSift,
    };
    Ok(Encoded { feature: FeatureVector::new(kind, out.into_iter().map(T::of).collect()), empty_quadrants })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when the mean per-descriptor log-likelihood gains less.
    pub tol: f64,
    /// Variance floor as a fraction of each dimension's data variance.
    pub var_floor: f64,
    /// Components lighter than this are re-split from the heaviest.
    pub min_weight: f64,
    pub kmeans_iter: usize,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self { k: 30, max_iter: 200, tol: 1e-6, var_floor: 1e-6, min_weight: 1e-8, kmeans_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmCodebook<T> {
    pub weights: Array1<T>,
    /// K×D.
    pub means: Array2<T>,
    /// K×D diagonal variances.
    pub variances: Array2<T>,
}

/// Per-component log-density terms cached for repeated evaluation.
struct GmmEval {
    log_norm: Vec<f64>,
    means: Array2<f64>,
    inv_var: Array2<f64>,
}

impl GmmEval {
    fn new(w: &Array1<f64>, means: &Array2<f64>, vars: &Array2<f64>) -> Self {
        let d = means.ncols() as f64;
        let log_norm = (0..w.len())
            .map(|k| w[k].ln() - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + vars.row(k).iter().map(|v| v.ln()).sum::<f64>()))
            .collect();
        Self { log_norm, means: means.clone(), inv_var: vars.mapv(|v| 1.0 / v) }
    }

    /// Writes posteriors γ(k) into `post`; returns log u_λ(x).
    fn posterior(&self, x: ArrayView1<'_, f64>, post: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (k, p) in post.iter_mut().enumerate() {
            let mu = self.means.row(k);
            let iv = self.inv_var.row(k);
            let mut q = 0.0;
            for d in 0..x.len() {
                let e = x[d] - mu[d];
                q += e * e * iv[d];
            }
            *p = self.log_norm[k] - 0.5 * q;
            max = max.max(*p);
        }
        let mut z = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            z += *p;
        }
        post.iter_mut().for_each(|p| *p /= z);
        max + z.ln()
    }
}

impl<T: Real> GmmCodebook<T> {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn eval(&self) -> GmmEval {
        GmmEval::new(&self.weights.mapv(|v| v.f64()), &self.means.mapv(|v| v.f64()), &self.variances.mapv(|v| v.f64()))
    }

    /// γ_t(k), T×K.
    pub fn posteriors(&self, x: ArrayView2<'_, T>) -> Array2<f64> {
        let e = self.eval();
        let mut out = Array2::zeros((x.nrows(), self.k()));
        for (t, row) in x.rows().into_iter().enumerate() {
            let xr = row.mapv(|v| v.f64());
            e.posterior(xr.view(), out.row_mut(t).as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Σ_t log u_λ(x_t).
    pub fn log_likelihood(&self, x: ArrayView2<'_, T>) -> f64 {
        let e = self.eval();
        let mut post = vec![0.0; self.k()];
        x.rows().into_iter().map(|row| e.posterior(row.mapv(|v| v.f64()).view(), &mut post)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub codebook: GmmCodebook<T>,
    /// Mean per-descriptor log-likelihood at each E-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Trace indices whose preceding M-step included a re-split.
    pub resplits: Vec<usize>,
    pub converged: bool,
}

const E_CHUNK: usize = 2048;

/// Responsibilities (N×K) and mean log-likelihood; chunks run in parallel
/// and are reduced in order.
fn e_step(x: &Array2<f64>, eval: &GmmEval, k: usize) -> (Array2<f64>, f64) {
    let n = x.nrows();
    let parts: Vec<(Array2<f64>, f64)> = (0..n.div_ceil(E_CHUNK))
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = (c * E_CHUNK, ((c + 1) * E_CHUNK).min(n));
            let mut resp = Array2::zeros((hi - lo, k));
            let mut ll = 0.0;
            for (i, t) in (lo..hi).enumerate() {
                ll += eval.posterior(x.row(t), resp.row_mut(i).as_slice_mut().expect("standard layout"));
            }
            (resp, ll)
        })
        .collect();
    let mut resp = Array2::zeros((n, k));
    let mut ll = 0.0;
    for (c, (r, l)) in parts.into_iter().enumerate() {
        let lo = c * E_CHUNK;
        resp.slice_mut(s![lo..lo + r.nrows(), ..]).assign(&r);
        ll += l;
    }
    (resp, ll / n as f64)
}

/// Weighted mean and floored variance of `x` under responsibilities.
fn m_step(x: &Array2<f64>, resp: &Array2<f64>, floor: &Array1<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let n = x.nrows() as f64;
    let nk = resp.sum_axis(Axis(0));
    let sx = resp.t().dot(x);
    let sxx = resp.t().dot(&x.mapv(|v| v * v));
    let k = nk.len();
    let mut means = Array2::zeros(sx.dim());
    let mut vars = Array2::zeros(sx.dim());
    for j in 0..k {
        let c = nk[j].max(f64::MIN_POSITIVE);
        for d in 0..x.ncols() {
            let mu = sx[[j, d]] / c;
            means[[j, d]] = mu;
            vars[[j, d]] = (sxx[[j, d]] / c - mu * mu).max(floor[d]);
        }
    }
    (nk / n, means, vars)
}

/// Replaces each component lighter than `min_weight` by half of the
/// heaviest one, displaced ±σ/2. Returns whether anything was split.
fn resplit(w: &mut Array1<f64>, means: &mut Array2<f64>, vars: &mut Array2<f64>, min_weight: f64) -> bool {
    let mut any = false;
    for j in 0..w.len() {
        if w[j] >= min_weight {
            continue;
        }
        let big = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        let delta = vars.row(big).mapv(|v| 0.5 * v.sqrt());
        let mu = means.row(big).to_owned();
        means.row_mut(j).assign(&(&mu + &delta));
        means.row_mut(big).assign(&(&mu - &delta));
        let v = vars.row(big).to_owned();
        vars.row_mut(j).assign(&v);
        let half = 0.5 * (w[big] + w[j]);
        w[big] = half;
        w[j] = half;
        any = true;
    }
    any
}

/// Diagonal-covariance EM initialized from spherical k-means assignments.
pub fn gmm_fit<T: Real>(desc: ArrayView2<'_, T>, params: &GmmParams, seed: u64) -> Result<GmmFit<T>> {
    let (n, d) = desc.dim();
    let k = params.k;
    if k == 0 || n < k || n < 2 {
        return Err(Error::InvalidArgument(format!("GMM needs T ≥ K ≥ 1 and T ≥ 2 (T = {n}, K = {k})")));
    }
    check_finite(desc, "GMM input")?;
    let x = to_f64(desc);
    let (_, cov) = covariance(&x);
    let floor: Array1<f64> = (0..d).map(|i| (params.var_floor * cov[[i, i]] * (n as f64 - 1.0) / n as f64).max(f64::MIN_POSITIVE)).collect();

    let km = spherical_kmeans_f64(&x, k, seed, params.kmeans_iter)?;
    let mut resp = Array2::zeros((n, k));
    for (t, &a) in km.assignments.iter().enumerate() {
        resp[[t, a]] = 1.0;
    }
    let (mut w, mut means, mut vars) = m_step(&x, &resp, &floor);
    let mut split_pending = resplit(&mut w, &mut means, &mut vars, params.min_weight);

    let mut trace = Vec::new();
    let mut resplits = Vec::new();
    let mut converged = false;
    loop {
        let eval = GmmEval::new(&w, &means, &vars);
        let (r, ll) = e_step(&x, &eval, k);
        if split_pending {
            resplits.push(trace.len());
        }
        let gain = trace.last().map(|&prev| ll - prev);
        trace.push(ll);
        if !split_pending && gain.is_some_and(|g| g < params.tol) {
            converged = true;
            break;
        }
        if trace.len() > params.max_iter {
            break;
        }
        (w, means, vars) = m_step(&x, &r, &floor);
        split_pending = resplit(&mut w, &mut means, &mut vars, params.min_weight);
    }
    let codebook = GmmCodebook { weights: w.mapv(T::of), means: means.mapv(T::of), variances: vars.mapv(T::of) };
    Ok(GmmFit { codebook, log_likelihood_trace: trace, resplits, converged })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FvOptions {
    /// Signed square root of each coordinate.
    pub power_norm: bool,
    /// Unit ℓ₂ norm of the full vector.
    pub l2_norm: bool,
}

/// Unpooled Fisher vector (𝒢_μ1, 𝒢_σ1, …, 𝒢_μK, 𝒢_σK) of all rows of `x`.
pub fn fisher_vector<T: Real>(x: ArrayView2<'_, T>, gmm: &GmmCodebook<T>) -> Result<Array1<f64>> {
    let all = vec![0; x.nrows()];
    Ok(fisher_pooled(x, &all, 1, gmm)?.0)
}

/// Fisher vectors summed per pool; returns (pools × 2DK values, per-pool counts).
fn fisher_pooled<T: Real>(x: ArrayView2<'_, T>, pool: &[usize], n_pools: usize, gmm: &GmmCodebook<T>) -> Result<(Array1<f64>, Vec<usize>)> {
    let (k, d) = (gmm.k(), gmm.dim());
    check_dim(d, x.ncols())?;
    let eval = gmm.eval();
    let sd = gmm.variances.mapv(|v| v.f64().sqrt());
    let inv_sqrt_w: Vec<f64> = gmm.weights.iter().map(|w| 1.0 / w.f64().sqrt()).collect();
    let block = 2 * d * k;
    let mut out = Array1::zeros(n_pools * block);
    let mut counts = vec![0; n_pools];
    let mut post = vec![0.0; k];
    let frac = std::f64::consts::FRAC_1_SQRT_2;
    for (t, row) in x.rows().into_iter().enumerate() {
        let xr = row.mapv(|v| v.f64());
        eval.posterior(xr.view(), &mut post);
        let q = pool[t];
        counts[q] += 1;
        for j in 0..k {
            let g = post[j] * inv_sqrt_w[j];
            if g == 0.0 {
                continue;
            }
            let base = q * block + j * 2 * d;
            for i in 0..d {
                let z = (xr[i] - eval.means[[j, i]]) / sd[[j, i]];
                out[base + i] += g * z;
                out[base + d + i] += g * frac * (z * z - 1.0);
            }
        }
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvCodebook<T> {
    pub gmm: GmmCodebook<T>,
    /// Applied to descriptors before the GMM when present.
    pub zca: Option<ZcaTransform<T>>,
    pub kind: DescriptorKind,
    pub options: FvOptions,
}

/// Per-quadrant Fisher vectors, quadrants row-major → 4·2DK values.
pub fn fv_encode<T: Real>(ds: &DescriptorSet<T>, book: &FvCodebook<T>) -> Result<Encoded<T>> {
    let whitened;
    let x = match &book.zca {
        Some(z) => {
            check_dim(z.dim(), ds.descriptors.ncols())?;
            whitened = z.apply(ds.descriptors.view());
            whitened.view()
        }
        None => ds.descriptors.view(),
    };
    let (mut v, counts) = fisher_pooled(x, &ds.quadrants(), 4, &book.gmm)?;
    if book.options.power_norm {
        v.mapv_inplace(|a| a.signum() * a.abs().sqrt());
    }
    if book.options.l2_norm {
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            v /= n;
        }
    }
    let kind = match book.kind {
        DescriptorKind::Raw => FeatureKind::FvRaw,
        DescriptorKind::Sift => FeatureKind::FvSift,
    };
    let empty_quadrants = (0..4).filter(|&q| counts[q] == 0).collect();
    Ok(Encoded { feature: FeatureVector::new(kind, v.mapv(T::of)), empty_quadrants })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FvParams {
    pub gmm: GmmParams,
    /// Whiten descriptors before the GMM.
    pub whiten: bool,
    pub epsilon: ZcaEpsilon,
    pub options: FvOptions,
}

impl Default for FvParams {
    fn default() -> Self {
        Self { gmm: GmmParams::default(), whiten: false, epsilon: ZcaEpsilon::default(), options: FvOptions::default() }
    }
}

pub fn fv_fit<T: Real>(desc: ArrayView2<'_, T>, kind: DescriptorKind, params: &FvParams, seed: u64) -> Result<FvCodebook<T>> {
    let (zca, gmm) = if params.whiten {
        let z = zca_fit(desc, params.epsilon)?;
        let w = z.apply(desc);
        (Some(z), gmm_fit(w.view(), &params.gmm, seed)?.codebook)
    } else {
        (None, gmm_fit(desc, &params.gmm, seed)?.codebook)
    };
    Ok(FvCodebook { gmm, zca, kind, options: params.options })
}

const BOV_KIND: &[u8; 4] = b"BOVD";
const FV_KIND: &[u8; 4] = b"FVCB";

pub fn write_bov<T: Real, W: Write>(dict: &BovDictionary<T>, w: W) -> Result<W> {
    let mut rec = RecordWriter::new(w, BOV_KIND, 1)?;
    rec.u64(dict.kind.tag())?;
    rec.matrix(dict.atoms.view())?;
    dict.zca.write(&mut rec)?;
    rec.finish()
}

pub fn read_bov<T: Real, R: Read>(r: R) -> Result<BovDictionary<T>> {
    let mut rec = RecordReader::open(r, BOV_KIND, 1)?;
    let kind = DescriptorKind::from_tag(rec.u64()?)?;
    let atoms = rec.matrix()?;
    let zca = ZcaTransform::read(&mut rec)?;
    check_dim(zca.dim(), atoms.ncols())?;
    Ok(BovDictionary { atoms, zca, kind })
}

pub fn write_fv<T: Real, W: Write>(book: &FvCodebook<T>, w: W) -> Result<W> {
    let mut rec = RecordWriter::new(w, FV_KIND, 1)?;
    rec.u64(book.kind.tag())?;
    rec.u64(u64::from(book.options.power_norm))?;
    rec.u64(u64::from(book.options.l2_norm))?;
    rec.vector(book.gmm.weights.view())?;
    rec.matrix(book.gmm.means.view())?;
    rec.matrix(book.gmm.variances.view())?;
    rec.u64(u64::from(book.zca.is_some()))?;
    if let Some(z) = &book.zca {
        z.write(&mut rec)?;
    }
    rec.finish()
}

pub fn read_fv<T: Real, R: Read>(r: R) -> Result<FvCodebook<T>> {
    let mut rec = RecordReader::open(r, FV_KIND, 1)?;
    let kind = DescriptorKind::from_tag(rec.u64()?)?;
    let options = FvOptions { power_norm: rec.u64()? != 0, l2_norm: rec.u64()? != 0 };
    let gmm = GmmCodebook { weights: rec.vector()?, means: rec.matrix()?, variances: rec.matrix()? };
    if gmm.means.dim() != gmm.variances.dim() || gmm.means.nrows() != gmm.weights.len() {
        return Err(Error::Format("inconsistent GMM blocks".into()));
    }
    let zca = if rec.u64()? != 0 { Some(ZcaTransform::read(&mut rec)?) } else { None };
    Ok(FvCodebook { gmm, zca, kind, options })
}
