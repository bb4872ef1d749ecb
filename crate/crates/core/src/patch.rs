//! Alarm-centered patches and background normalization.
//!
//! A patch is a 100×100 grid at 3 cm/pixel (3 m × 3 m) resampled by nearest
//! neighbour from the frame that saw the alarm location closest to the
//! nominal standoff. Normalization standardizes the magnitude by the mean
//! and population standard deviation of the pixels outside the centered
//! 50×50 (1.5 m) window.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex;

use crate::dataset::{Channel, Frame, Lane};
use crate::error::{Error, Result};
use crate::geometry::Utm;
use crate::scalar::Real;

pub const PATCH_SIZE: usize = 100;
pub const PATCH_RESOLUTION_M: f64 = 0.03;
/// Side of the centered window excluded from the background statistics.
pub const PATCH_CENTER_WINDOW: usize = 50;
/// Pixel index that lands exactly on the alarm location.
pub const PATCH_CENTER_PIXEL: usize = PATCH_SIZE / 2;
/// σ substitute for a flat background.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPatch<T> {
    pub pixels: Array2<Complex<T>>,
    pub center_utm: Utm,
    pub channel: Channel,
    pub resolution_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatch<T> {
    pub pixels: Array2<T>,
    pub bg_mean: T,
    pub bg_std: T,
    /// Background standard deviation was zero and replaced by [`DEGENERATE_STD`].
    pub degenerate: bool,
}

/// The frame of `channel` covering `utm` whose center is closest down-track
/// to `utm`, i.e. whose sensor-to-point distance is nearest the standoff.
/// Ties go to the earlier frame.
pub fn select_frame<'a>(lane: &'a Lane, utm: &Utm, channel: Channel) -> Result<&'a Frame> {
    if !lane.has_channel(channel) {
        return Err(Error::MissingChannel(channel));
    }
    let mut best: Option<(f64, &Frame)> = None;
    for f in lane.frames(channel).filter(|f| f.covers(utm)) {
        let err = ((utm.northing - f.sensor_northing()) - f.standoff_m).abs();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, f));
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::OutOfBounds(format!("no {channel} frame covers {utm:?}")))
}

/// Nearest-neighbour resampling of a frame onto a square grid centered at
/// `center` (grid pixel `size/2` lands on `center`); out-of-frame samples
/// clamp to the frame edge.
pub fn resample<T: Real>(frame: &Frame, center: &Utm, size: usize, resolution_m: f64) -> Array2<Complex<T>> {
    let half = (size / 2) as f64;
    let (rows, cols) = (frame.rows() as f64, frame.cols() as f64);
    Array2::from_shape_fn((size, size), |(i, j)| {
        let p = center.offset((j as f64 - half) * resolution_m, (i as f64 - half) * resolution_m);
        let (r, c) = frame.geometry.utm_to_pixel(&p);
        let r = r.round().clamp(0.0, rows - 1.0) as usize;
        let c = c.round().clamp(0.0, cols - 1.0) as usize;
        let px = frame.pixels[[r, c]];
        Complex::new(T::of(f64::from(px.re)), T::of(f64::from(px.im)))
    })
}

pub fn extract_patch<T: Real>(lane: &Lane, utm: &Utm, channel: Channel) -> Result<ComplexPatch<T>> {
    if !lane.bounds().contains(utm) {
        return Err(Error::OutOfBounds(format!("{utm:?} is outside lane {}", lane.spec.lane_id)));
    }
    let frame = select_frame(lane, utm, channel)?;
    Ok(ComplexPatch {
        pixels: resample(frame, utm, PATCH_SIZE, PATCH_RESOLUTION_M),
        center_utm: *utm,
        channel,
        resolution_m: PATCH_RESOLUTION_M,
    })
}

/// Background normalization of a magnitude image: pixels outside the
/// centered `center×center` window define μ_bg and σ_bg (population).
pub fn normalize_magnitudes<T: Real>(magnitude: ArrayView2<'_, T>, center: usize) -> NormalizedPatch<T> {
    let (rows, cols) = magnitude.dim();
    let (r0, c0) = ((rows - center.min(rows)) / 2, (cols - center.min(cols)) / 2);
    let inside = |r: usize, c: usize| r >= r0 && r < r0 + center && c >= c0 && c < c0 + center;
    let background = || {
        magnitude
            .indexed_iter()
            .filter(move |&((r, c), _)| !inside(r, c))
            .map(|(_, v)| v.f64())
    };
    let n = background().count().max(1) as f64;
    let mean = background().sum::<f64>() / n;
    let var = background().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut std = var.sqrt();
    let degenerate = !(std > 0.0);
    if degenerate {
        std = DEGENERATE_STD;
    }
    let (m, s) = (T::of(mean), T::of(std));
    NormalizedPatch {
        pixels: magnitude.mapv(|v| (v - m) / s),
        bg_mean: m,
        bg_std: s,
        degenerate,
    }
}

pub fn normalize_patch<T: Real>(x: &ComplexPatch<T>) -> NormalizedPatch<T> {
    normalize_magnitudes(x.pixels.mapv(|p| p.norm()).view(), PATCH_CENTER_WINDOW)
}

impl<T: Real> NormalizedPatch<T> {
    /// Background (outside the center window) pixels, for checks.
    pub fn background(&self, center: usize) -> Vec<T> {
        let (rows, cols) = self.pixels.dim();
        let (r0, c0) = ((rows - center) / 2, (cols - center) / 2);
        let mut mask = Array2::from_elem((rows, cols), true);
        mask.slice_mut(s![r0..r0 + center, c0..c0 + center]).fill(false);
        self.pixels
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_lane, LaneSpec};
    use crate::geometry::GridGeometry;
    use crate::rng::rng_for;
    use ndarray::array;
    use num_complex::Complex32;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn lane() -> Lane {
        let mut spec = LaneSpec::new("p", 12.0, 4.0, 2, 9);
        spec.clutter_density = 0.0;
        generate_lane(&spec).unwrap()
    }

    #[test]
    fn patch_center_is_the_frame_pixel() {
        let lane = lane();
        let b = lane.bounds();
        let guess = Utm::new(b.min.easting + 2.0, b.min.northing + 6.0);
        let frame = select_frame(&lane, &guess, Channel::HH).unwrap();
        let (r, c) = frame.geometry.nearest_pixel(&guess, frame.rows(), frame.cols()).unwrap();
        let utm = frame.geometry.pixel_to_utm(r as f64, c as f64);
        let p = extract_patch::<f64>(&lane, &utm, Channel::HH).unwrap();
        assert_eq!(p.pixels.dim(), (PATCH_SIZE, PATCH_SIZE));
        let px = frame.pixels[[r, c]];
        let center = p.pixels[[PATCH_CENTER_PIXEL, PATCH_CENTER_PIXEL]];
        assert_eq!(center, Complex::new(f64::from(px.re), f64::from(px.im)));
    }

    #[test]
    fn out_of_lane_is_an_error() {
        let lane = lane();
        let b = lane.bounds();
        let outside = Utm::new(b.min.easting - 1.0, b.min.northing + 3.0);
        assert!(matches!(extract_patch::<f64>(&lane, &outside, Channel::VV), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn frame_nearest_standoff_wins() {
        // Two frames over the same ground; sensors 4.2 m and 5.4 m behind the point.
        let geometry = |n0: f64| GridGeometry { origin: Utm::new(0.0, n0), resolution_m: 0.03 };
        let frame = |n0: f64, fill: f32| Frame {
            channel: Channel::VV,
            pixels: Array2::from_elem((200, 200), Complex32::new(fill, 0.0)),
            geometry: geometry(n0),
            standoff_m: 5.0,
        };
        // Center northing = n0 + 99.5·0.03 = n0 + 2.985.
        let f1 = frame(1.815, 1.0); // center 4.8, sensor -0.2 → offset 5.2
        let f2 = frame(2.415, 2.0); // center 5.4, sensor 0.4 → offset 4.6
        let point = Utm::new(3.0, 5.0);
        let mut spec = LaneSpec::new("two", 10.0, 6.0, 0, 0);
        spec.sensor.origin = Utm::new(0.0, 0.0);
        let lane = Lane { spec, frames: vec![f2.clone(), f1.clone()], truth: vec![] };
        let chosen = select_frame(&lane, &point, Channel::VV).unwrap();
        assert_eq!(chosen.geometry, f1.geometry);
        let p = extract_patch::<f64>(&lane, &point, Channel::VV).unwrap();
        assert_eq!(p.pixels[[50, 50]].re, 1.0);
    }

    #[test]
    fn constant_magnitude_is_degenerate() {
        let x = ComplexPatch {
            pixels: Array2::from_elem((100, 100), Complex::new(0.0, 3.0)),
            center_utm: Utm::default(),
            channel: Channel::HH,
            resolution_m: 0.03,
        };
        let n = normalize_patch(&x);
        assert!(n.degenerate);
        assert!(n.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn background_is_standardized() {
        let mut rng = rng_for(21, &[]);
        let dist = Normal::new(5.0, 2.0).unwrap();
        let mut mag = Array2::from_shape_simple_fn((100, 100), || dist.sample(&mut rng));
        mag.slice_mut(s![25..75, 25..75]).fill(0.0);
        let n = normalize_magnitudes(mag.view(), 50);
        let bg = n.background(50);
        let mean = bg.iter().sum::<f64>() / bg.len() as f64;
        let sd = (bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bg.len() as f64).sqrt();
        assert!(mean.abs() < 0.05 && (sd - 1.0).abs() < 0.05);
        // Exact up to rounding, since the statistics come from this very set.
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        assert!((n.bg_mean - 5.0).abs() < 0.1 && (n.bg_std - 2.0).abs() < 0.1);
    }

    #[test]
    fn toy_four_by_four_matches_direct_evaluation() {
        let mag = array![
            [1.0, 2.0, 3.0, 4.0],
            [5.0, 60.0, 70.0, 8.0],
            [9.0, 80.0, 90.0, 12.0],
            [13.0, 14.0, 15.0, 16.0]
        ];
        let bg = [1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 12.0, 13.0, 14.0, 15.0, 16.0];
        let mu = bg.iter().sum::<f64>() / 12.0;
        let sd = (bg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 12.0).sqrt();
        let n = normalize_magnitudes(mag.view(), 2);
        for ((r, c), &v) in n.pixels.indexed_iter() {
            assert!((v - (mag[[r, c]] - mu) / sd).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_scale_cancels() {
        let mut rng = rng_for(5, &[]);
        let pixels = Array2::from_shape_simple_fn((100, 100), || Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let x = ComplexPatch { pixels, center_utm: Utm::default(), channel: Channel::VV, resolution_m: 0.03 };
        let mut y = x.clone();
        y.pixels.mapv_inplace(|p| p * 4.0);
        assert_eq!(normalize_patch(&x).pixels, normalize_patch(&y).pixels);
    }
}
