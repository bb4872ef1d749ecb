//! Where inside a patch a BOV(Raw) linear classifier sees target evidence,
//! and what the learned dictionary atoms look like in pixel space.
//!
//! The classifier's 4K weights are four quadrant blocks. A 2×2 window of
//! neighbouring descriptors is max-pooled into one K-vector and scored with
//! the block of the quadrant holding the window center, so the map is a
//! local version of the pooled decision value without its intercept.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::classifiers::Classifier;
use crate::encoders::{dense_descriptors, quadrant, BovDictionary, DescriptorKind, DescriptorParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Window side, in descriptors.
pub const MAP_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    /// (grid rows − 1) × (grid cols − 1).
    pub values: Array2<f64>,
    /// Pixel coordinates of each window center, row-major.
    pub centers_px: Vec<(f64, f64)>,
    pub patch_dim: (usize, usize),
}

/// Window scores from a descriptor grid, given per-quadrant weight blocks
/// (`weights.len() == 4K`).
pub fn confidence_map_weights<T: Real>(img: ArrayView2<'_, T>, dict: &BovDictionary<T>, params: &DescriptorParams, weights: &[f64]) -> Result<ConfidenceMap> {
    if dict.kind != DescriptorKind::Raw {
        return Err(Error::Unsupported("confidence maps are defined for BOV(Raw) dictionaries".into()));
    }
    let k = dict.k();
    if weights.len() != 4 * k {
        return Err(Error::DimensionMismatch { expected: 4 * k, got: weights.len() });
    }
    let ds = dense_descriptors(img, DescriptorKind::Raw, params);
    if ds.descriptors.ncols() != dict.zca.dim() {
        return Err(Error::DimensionMismatch { expected: dict.zca.dim(), got: ds.descriptors.ncols() });
    }
    let (gr, gc) = ds.grid;
    if gr < MAP_WINDOW || gc < MAP_WINDOW {
        return Err(Error::InvalidArgument(format!("descriptor grid {gr}×{gc} is smaller than the map window")));
    }
    let gamma = dict.similarities(ds.descriptors.view());
    let (mr, mc) = (gr - MAP_WINDOW + 1, gc - MAP_WINDOW + 1);
    let cells: Vec<(f64, (f64, f64))> = (0..mr * mc)
        .into_par_iter()
        .map(|w| {
            let (a, b) = (w / mc, w % mc);
            let members: Vec<usize> = (a..a + MAP_WINDOW).flat_map(|i| (b..b + MAP_WINDOW).map(move |j| i * gc + j)).collect();
            let n = members.len() as f64;
            let center = members.iter().fold((0.0, 0.0), |acc, &t| (acc.0 + ds.centers_px[t].0 / n, acc.1 + ds.centers_px[t].1 / n));
            let block = &weights[quadrant(center, ds.patch_dim) * k..][..k];
            let score = (0..k)
                .map(|j| {
                    let pooled = members.iter().map(|&t| gamma[[t, j]]).fold(f64::NEG_INFINITY, f64::max);
                    block[j] * pooled
                })
                .sum();
            (score, center)
        })
        .collect();
    Ok(ConfidenceMap {
        values: Array2::from_shape_vec((mr, mc), cells.iter().map(|c| c.0).collect()).expect("mr·mc cells"),
        centers_px: cells.into_iter().map(|c| c.1).collect(),
        patch_dim: ds.patch_dim,
    })
}

/// Map for a linear classifier trained on pooled BOV(Raw) features; the
/// classifier's standardization is folded into raw-scale weights.
pub fn confidence_map<T: Real>(img: ArrayView2<'_, T>, dict: &BovDictionary<T>, params: &DescriptorParams, classifier: &Classifier<T>) -> Result<ConfidenceMap> {
    let (w, _) = classifier
        .effective_linear()
        .ok_or_else(|| Error::Unsupported(format!("{} has no linear weights", classifier.kind)))?;
    let w: Vec<f64> = w.iter().map(|v| v.f64()).collect();
    confidence_map_weights(img, dict, params, &w)
}

/// Mid-rank percentiles in [0, 100]: the share of values below plus half
/// the share equal.
pub fn rank_percentiles(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|s| s < v) as f64;
            let upto = sorted.partition_point(|s| s <= v) as f64;
            100.0 * (below + 0.5 * (upto - below)) / n
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryImage {
    /// Values in [0, 1]; gaps between tiles are 1.
    pub pixels: Array2<f64>,
    pub tile: usize,
    pub grid: (usize, usize),
    pub gap: usize,
}

/// Tile layout for K atoms: ⌊√K⌋ rows.
pub fn tile_grid(k: usize) -> (usize, usize) {
    let rows = ((k as f64).sqrt().floor() as usize).max(1);
    (rows, k.div_ceil(rows))
}

/// Min-max stretch to [0, 1]; a flat tile is mid gray.
pub fn stretch(v: &Array1<f64>) -> Array1<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return Array1::from_elem(v.len(), 0.5);
    }
    v.mapv(|x| (x - lo) / (hi - lo))
}

/// Each atom is mapped back through the inverse ZCA (as a direction, so
/// the descriptor mean is not added), reshaped to its window, stretched
/// and tiled.
pub fn render_dictionary<T: Real>(dict: &BovDictionary<T>, gap: usize) -> Result<DictionaryImage> {
    if dict.kind != DescriptorKind::Raw {
        return Err(Error::Unsupported("SIFT atoms have no pixel-space rendering".into()));
    }
    let d = dict.zca.dim();
    let tile = (d as f64).sqrt().round() as usize;
    if tile * tile != d {
        return Err(Error::InvalidArgument(format!("descriptor dimension {d} is not a square window")));
    }
    let (rows, cols) = tile_grid(dict.k());
    let step = tile + gap;
    let mut pixels = Array2::from_elem((rows * step - gap, cols * step - gap), 1.0);
    for (i, atom) in dict.atoms.rows().into_iter().enumerate() {
        let back: Array1<f64> = atom.dot(&dict.zca.inverse).mapv(|v| v.f64());
        let t = stretch(&back);
        let (r0, c0) = ((i / cols) * step, (i % cols) * step);
        for (p, &v) in t.iter().enumerate() {
            pixels[[r0 + p / tile, c0 + p % tile]] = v;
        }
    }
    Ok(DictionaryImage { pixels, tile, grid: (rows, cols), gap })
}
