//! PLSDA (NIPALS PLS1) and soft-margin SVMs (SMO over a precomputed Gram
//! matrix), plus the z-scoring every classifier sees its features through.
//!
//! Labels are `true` for targets (+1) and `false` for non-targets (−1).
//! Every decision statistic is larger for more target-like inputs.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{RecordReader, RecordWriter};
use crate::scalar::Real;

fn sign(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

fn check_classes(y: &[bool]) -> Result<()> {
    if y.iter().any(|&v| v) && y.iter().any(|&v| !v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("training labels must contain both classes".into()))
    }
}

fn check_rows(n: usize, y: usize) -> Result<()> {
    if n == y {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: n, got: y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats<T> {
    pub mean: Array1<T>,
    /// Population std; columns with a (relatively) vanishing spread use 1.
    pub std: Array1<T>,
}

/// Relative spread below which a column counts as constant.
pub const STD_FLOOR: f64 = 1e-12;

pub fn standardize_fit<T: Real>(train: ArrayView2<'_, T>) -> Result<StandardizationStats<T>> {
    let (n, d) = train.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("standardization needs N ≥ 2, got {n}")));
    }
    let mut mean = Array1::zeros(d);
    let mut std = Array1::zeros(d);
    for (j, col) in train.axis_iter(Axis(1)).enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            mean[j] = first;
            std[j] = T::one();
            continue;
        }
        let m = col.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        mean[j] = T::of(m);
        std[j] = T::of(if s <= STD_FLOOR * m.abs().max(1.0) { 1.0 } else { s });
    }
    Ok(StandardizationStats { mean, std })
}

pub fn standardize_apply<T: Real>(stats: &StandardizationStats<T>, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if x.ncols() != stats.mean.len() {
        return Err(Error::DimensionMismatch { expected: stats.mean.len(), got: x.ncols() });
    }
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        row.zip_mut_with(&stats.mean, |v, &m| *v = *v - m);
        row.zip_mut_with(&stats.std, |v, &s| *v = *v / s);
    }
    Ok(out)
}

/// Linear PLS1 model: score = x·coef + intercept on the input scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsdaModel<T> {
    pub n_components: usize,
    pub coef: Array1<T>,
    pub intercept: T,
}

/// Fit diagnostics for PLSDA.
#[derive(Debug, Clone)]
pub struct PlsdaFit<T> {
    pub model: PlsdaModel<T>,
    /// N×A latent scores.
    pub scores: Array2<T>,
}

/// NIPALS PLS1 on column-centered `x` and centered ±1 labels. Deflation is
/// implicit (X is never copied): X_a = X − Σ t_b p_bᵀ is applied through
/// its products. Stops early when the residual label vector vanishes.
pub fn plsda_fit_detailed<T: Real>(x: ArrayView2<'_, T>, y: &[bool], n_components: usize) -> Result<PlsdaFit<T>> {
    let (n, d) = x.dim();
    check_rows(n, y.len())?;
    check_classes(y)?;
    if n_components == 0 || n_components > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!("PLSDA needs 1 ≤ components ≤ min(N−1, D) = {}, got {n_components}", (n - 1).min(d))));
    }
    let xmean = x.mean_axis(Axis(0)).expect("n ≥ 2");
    let xc = &x - &xmean;
    let yv: Array1<T> = y.iter().map(|&v| T::of(sign(v))).collect();
    let ymean = yv.sum() / T::of_usize(n);
    let y0 = &yv - ymean;
    let y_norm = y0.dot(&y0).sqrt();

    let xty = xc.t().dot(&y0);
    let mut ws: Vec<Array1<T>> = Vec::new();
    let mut ts: Vec<Array1<T>> = Vec::new();
    let mut ps: Vec<Array1<T>> = Vec::new();
    let mut qs: Vec<T> = Vec::new();
    let mut yres = y0.clone();
    let tiny = T::of(1e-12);
    for _ in 0..n_components {
        if yres.dot(&yres).sqrt() <= tiny * y_norm {
            break;
        }
        // X_aᵀy = Xᵀy − Σ p_b (t_bᵀ y).
        let mut w = xty.clone();
        for (p, t) in ps.iter().zip(&ts) {
            w.scaled_add(-t.dot(&y0), p);
        }
        let wn = w.dot(&w).sqrt();
        if wn <= tiny * xty.dot(&xty).sqrt().max(T::min_positive_value()) {
            break;
        }
        w.mapv_inplace(|v| v / wn);
        let mut t = xc.dot(&w);
        for (p, tb) in ps.iter().zip(&ts) {
            t.scaled_add(-p.dot(&w), tb);
        }
        let tt = t.dot(&t);
        if tt <= T::min_positive_value() {
            break;
        }
        let mut p = xc.t().dot(&t);
        for (pb, tb) in ps.iter().zip(&ts) {
            p.scaled_add(-tb.dot(&t), pb);
        }
        p.mapv_inplace(|v| v / tt);
        let q = y0.dot(&t) / tt;
        yres.scaled_add(-q, &t);
        ws.push(w);
        ts.push(t);
        ps.push(p);
        qs.push(q);
    }
    let a = ws.len();
    if a == 0 {
        return Err(Error::Singular("PLSDA extracted no component".into()));
    }
    // β = W (PᵀW)⁻¹ q.
    let ptw = DMatrix::from_fn(a, a, |i, j| ps[i].dot(&ws[j]).f64());
    let qv = DVector::from_iterator(a, qs.iter().map(|v| v.f64()));
    let c = ptw.lu().solve(&qv).ok_or_else(|| Error::Singular("PᵀW is singular".into()))?;
    let mut coef = Array1::<T>::zeros(d);
    for (k, w) in ws.iter().enumerate() {
        coef.scaled_add(T::of(c[k]), w);
    }
    let intercept = ymean - xmean.dot(&coef);
    let mut scores = Array2::zeros((n, a));
    for (k, t) in ts.iter().enumerate() {
        scores.column_mut(k).assign(t);
    }
    Ok(PlsdaFit { model: PlsdaModel { n_components: a, coef, intercept }, scores })
}

pub fn plsda_fit<T: Real>(x: ArrayView2<'_, T>, y: &[bool], n_components: usize) -> Result<PlsdaModel<T>> {
    Ok(plsda_fit_detailed(x, y, n_components)?.model)
}

pub fn plsda_predict<T: Real>(model: &PlsdaModel<T>, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if x.ncols() != model.coef.len() {
        return Err(Error::DimensionMismatch { expected: model.coef.len(), got: x.ncols() });
    }
    Ok(x.dot(&model.coef) + model.intercept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    /// RBF width; `None` means 1/D.
    pub gamma: Option<f64>,
    /// Stop when the maximal KKT violation m(α) − M(α) falls below this.
    pub tol: f64,
    /// Iteration cap; 0 means max(10⁷, 100·N).
    pub max_iter: usize,
    /// Record the dual objective after every update (diagnostics).
    pub trace_objective: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, gamma: None, tol: 1e-3, max_iter: 0, trace_objective: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    pub kernel: KernelKind,
    pub gamma: f64,
    pub c: f64,
    /// Rows with α > 0 (RBF only; empty for linear).
    pub support: Array2<T>,
    /// α_i y_i per support row.
    pub dual_coef: Array1<T>,
    /// Primal weights (linear only; empty for RBF).
    pub weights: Array1<T>,
    pub bias: T,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct SvmFit<T> {
    pub model: SvmModel<T>,
    /// Full α vector over the training rows.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// Final m(α) − M(α).
    pub kkt_gap: f64,
    /// Dual objective eᵀα − ½αᵀQα, when traced.
    pub objective_trace: Vec<f64>,
}

fn gram<T: Real>(x: ArrayView2<'_, T>, kernel: KernelKind, gamma: f64) -> Array2<f64> {
    let xf = x.mapv(|v| v.f64());
    let mut k = xf.dot(&xf.t());
    if kernel == KernelKind::Rbf {
        let diag: Vec<f64> = k.diag().to_vec();
        k.indexed_iter_mut().for_each(|((i, j), v)| *v = (-gamma * (diag[i] + diag[j] - 2.0 * *v).max(0.0)).exp());
    }
    k
}

/// Soft-margin dual solved by SMO with second-order working-set selection.
pub fn svm_fit_detailed<T: Real>(x: ArrayView2<'_, T>, y: &[bool], kernel: KernelKind, params: &SvmParams) -> Result<SvmFit<T>> {
    let (n, d) = x.dim();
    check_rows(n, y.len())?;
    check_classes(y)?;
    let gamma = params.gamma.unwrap_or(1.0 / d.max(1) as f64);
    let c = params.c;
    let k = gram(x, kernel, gamma);
    let ys: Vec<f64> = y.iter().map(|&v| sign(v)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = if params.max_iter == 0 { (100 * n).max(10_000_000) } else { params.max_iter };
    let mut trace = Vec::new();
    let objective = |alpha: &[f64], grad: &[f64]| -> f64 { -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() };
    if params.trace_objective {
        trace.push(objective(&alpha, &grad));
    }
    let tau = 1e-12;
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let mut iterations = 0;
    let mut gap;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], ys[t]) {
                let v = -ys[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], ys[t]) {
                continue;
            }
            let v = -ys[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX {
                let b = gmax - v;
                if b > 0.0 {
                    let a = k[[i, i]] + k[[t, t]] - 2.0 * k[[i, t]];
                    let score = -(b * b) / if a > 0.0 { a } else { tau };
                    if score < best {
                        best = score;
                        j = t;
                    }
                }
            }
        }
        gap = gmax - gmin;
        if gap < params.tol || j == usize::MAX || i == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged { iterations, residual: gap });
        }
        iterations += 1;
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = {
            let q = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            if q > 0.0 {
                q
            } else {
                tau
            }
        };
        // Update along y_i Δα_i = −y_j Δα_j, then clip to the box.
        if ys[i] != ys[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        let (ki, kj) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += ys[t] * (ys[i] * ki[t] * dai + ys[j] * kj[t] * daj);
        }
        if params.trace_objective {
            trace.push(objective(&alpha, &grad));
        }
    }
    // ρ from free vectors, else the midpoint of the feasible interval.
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else if (alpha[t] >= c && ys[t] < 0.0) || (alpha[t] <= 0.0 && ys[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { 0.5 * (ub + lb) };
    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let dual: Vec<f64> = sv.iter().map(|&t| alpha[t] * ys[t]).collect();
    let model = match kernel {
        KernelKind::Linear => {
            let mut w = Array1::<f64>::zeros(d);
            for (&t, &a) in sv.iter().zip(&dual) {
                w.scaled_add(a, &x.row(t).mapv(|v| v.f64()));
            }
            SvmModel {
                kernel,
                gamma,
                c,
                support: Array2::zeros((0, d)),
                dual_coef: Array1::zeros(0),
                weights: w.mapv(T::of),
                bias: T::of(-rho),
                dim: d,
            }
        }
        KernelKind::Rbf => SvmModel {
            kernel,
            gamma,
            c,
            support: x.select(Axis(0), &sv),
            dual_coef: dual.iter().map(|&v| T::of(v)).collect(),
            weights: Array1::zeros(0),
            bias: T::of(-rho),
            dim: d,
        },
    };
    Ok(SvmFit { model, alpha, iterations, kkt_gap: gap, objective_trace: trace })
}

pub fn svm_fit<T: Real>(x: ArrayView2<'_, T>, y: &[bool], kernel: KernelKind, params: &SvmParams) -> Result<SvmModel<T>> {
    Ok(svm_fit_detailed(x, y, kernel, params)?.model)
}

pub fn svm_predict<T: Real>(model: &SvmModel<T>, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if x.ncols() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: x.ncols() });
    }
    Ok(match model.kernel {
        KernelKind::Linear => x.dot(&model.weights) + model.bias,
        KernelKind::Rbf => {
            let sv = model.support.mapv(|v| v.f64());
            let sv_sq: Vec<f64> = sv.rows().into_iter().map(|r| r.dot(&r)).collect();
            let coef = model.dual_coef.mapv(|v| v.f64());
            let rows: Vec<T> = (0..x.nrows())
                .into_par_iter()
                .map(|i| {
                    let r = x.row(i).mapv(|v| v.f64());
                    let rr = r.dot(&r);
                    let cross = sv.dot(&r);
                    let s: f64 = (0..sv.nrows()).map(|i| coef[i] * (-model.gamma * (rr + sv_sq[i] - 2.0 * cross[i]).max(0.0)).exp()).sum();
                    T::of(s) + model.bias
                })
                .collect();
            Array1::from(rows)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Plsda,
    SvmLinear,
    SvmRbf,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Plsda, ClassifierKind::SvmLinear, ClassifierKind::SvmRbf];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Plsda => "plsda",
            ClassifierKind::SvmLinear => "svm-linear",
            ClassifierKind::SvmRbf => "svm-rbf",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown classifier `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierParams {
    pub plsda_components: usize,
    pub svm: SvmParams,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self { plsda_components: 5, svm: SvmParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind<T> {
    Plsda(PlsdaModel<T>),
    Svm(SvmModel<T>),
}

/// A classifier together with the training standardization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub kind: ClassifierKind,
    pub stats: StandardizationStats<T>,
    pub model: ModelKind<T>,
}

impl<T: Real> Classifier<T> {
    /// Standardizes with `x`'s own statistics and fits. PLSDA components
    /// are clamped to min(N − 1, D).
    pub fn fit(kind: ClassifierKind, x: ArrayView2<'_, T>, y: &[bool], params: &ClassifierParams) -> Result<Self> {
        let stats = standardize_fit(x)?;
        let z = standardize_apply(&stats, x)?;
        let model = match kind {
            ClassifierKind::Plsda => {
                let a = params.plsda_components.min(z.nrows() - 1).min(z.ncols()).max(1);
                ModelKind::Plsda(plsda_fit(z.view(), y, a)?)
            }
            ClassifierKind::SvmLinear => ModelKind::Svm(svm_fit(z.view(), y, KernelKind::Linear, &params.svm)?),
            ClassifierKind::SvmRbf => ModelKind::Svm(svm_fit(z.view(), y, KernelKind::Rbf, &params.svm)?),
        };
        Ok(Self { kind, stats, model })
    }

    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let z = standardize_apply(&self.stats, x)?;
        match &self.model {
            ModelKind::Plsda(m) => plsda_predict(m, z.view()),
            ModelKind::Svm(m) => svm_predict(m, z.view()),
        }
    }

    /// Weights and intercept of a linear model on the raw (unstandardized)
    /// feature scale.
    pub fn effective_linear(&self) -> Option<(Array1<T>, T)> {
        let (w, b) = match &self.model {
            ModelKind::Plsda(m) => (m.coef.view(), m.intercept),
            ModelKind::Svm(m) if m.kernel == KernelKind::Linear => (m.weights.view(), m.bias),
            ModelKind::Svm(_) => return None,
        };
        let eff: Array1<T> = &w / &self.stats.std;
        let shift = self.stats.mean.dot(&eff);
        Some((eff, b - shift))
    }
}

const CLASSIFIER_KIND: &[u8; 4] = b"CLSF";

fn kind_tag(k: ClassifierKind) -> u64 {
    k as u64
}

fn write_vec<T: Real, W: Write>(w: &mut RecordWriter<W>, v: ArrayView1<'_, T>) -> Result<()> {
    w.vector(v)
}

pub fn write_classifier<T: Real, W: Write>(c: &Classifier<T>, w: W) -> Result<W> {
    let mut rec = RecordWriter::new(w, CLASSIFIER_KIND, 1)?;
    rec.u64(kind_tag(c.kind))?;
    write_vec(&mut rec, c.stats.mean.view())?;
    write_vec(&mut rec, c.stats.std.view())?;
    match &c.model {
        ModelKind::Plsda(m) => {
            rec.u64(m.n_components as u64)?;
            rec.vector(m.coef.view())?;
            rec.f64(m.intercept.f64())?;
        }
        ModelKind::Svm(m) => {
            rec.f64(m.gamma)?;
            rec.f64(m.c)?;
            rec.u64(m.dim as u64)?;
            rec.f64(m.bias.f64())?;
            rec.matrix(m.support.view())?;
            rec.vector(m.dual_coef.view())?;
            rec.vector(m.weights.view())?;
        }
    }
    rec.finish()
}

pub fn read_classifier<T: Real, R: Read>(r: R) -> Result<Classifier<T>> {
    let mut rec = RecordReader::open(r, CLASSIFIER_KIND, 1)?;
    let kind = match rec.u64()? {
        0 => ClassifierKind::Plsda,
        1 => ClassifierKind::SvmLinear,
        2 => ClassifierKind::SvmRbf,
        t => return Err(Error::Format(format!("unknown classifier tag {t}"))),
    };
    let stats = StandardizationStats { mean: rec.vector()?, std: rec.vector()? };
    let model = match kind {
        ClassifierKind::Plsda => ModelKind::Plsda(PlsdaModel { n_components: rec.usize()?, coef: rec.vector()?, intercept: T::of(rec.f64()?) }),
        _ => {
            let (gamma, c, dim, bias) = (rec.f64()?, rec.f64()?, rec.usize()?, T::of(rec.f64()?));
            let kernel = if kind == ClassifierKind::SvmRbf { KernelKind::Rbf } else { KernelKind::Linear };
            ModelKind::Svm(SvmModel { kernel, gamma, c, dim, bias, support: rec.matrix()?, dual_coef: rec.vector()?, weights: rec.vector()? })
        }
    };
    Ok(Classifier { kind, stats, model })
}
