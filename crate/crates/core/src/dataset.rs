//! Synthetic multi-polarization lanes.
//!
//! A lane is a rectangle of ground imaged by a sequence of overlapping
//! frames per polarization channel. Each frame is a complex image made of
//! spatially correlated circular Gaussian speckle (Rayleigh magnitude) plus
//! anisotropic Gaussian "blob" responses from buried targets and surface
//! clutter. Frames are spaced so every ground point is seen by several
//! frames, which is what makes the prescreener produce multiple alarms per
//! object.
//!
//! Generation is a pure function of the [`LaneSpec`] (the seed lives in the
//! spec); lanes persist to a little-endian binary container plus a
//! ground-truth CSV sidecar.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex32;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, GridGeometry, Utm};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    HH,
    VV,
    VH,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::HH, Channel::VV, Channel::VH];

    pub fn index(self) -> usize {
        match self {
            Channel::HH => 0,
            Channel::VV => 1,
            Channel::VH => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Channel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::HH => "HH",
            Channel::VV => "VV",
            Channel::VH => "VH",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HH" => Ok(Channel::HH),
            "VV" => Ok(Channel::VV),
            "VH" | "HV" => Ok(Channel::VH),
            other => Err(Error::InvalidArgument(format!("unknown channel `{other}`"))),
        }
    }
}

/// Per-channel `[low, high]` SNR range in dB, relative to unit-power speckle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSnr {
    pub hh: [f64; 2],
    pub vv: [f64; 2],
    pub vh: [f64; 2],
}

impl ChannelSnr {
    pub fn get(&self, ch: Channel) -> [f64; 2] {
        match ch {
            Channel::HH => self.hh,
            Channel::VV => self.vv,
            Channel::VH => self.vh,
        }
    }

    pub fn uniform(range: [f64; 2]) -> Self {
        Self { hh: range, vv: range, vh: range }
    }
}

impl Default for ChannelSnr {
    fn default() -> Self {
        Self { hh: [16.0, 26.0], vv: [12.0, 22.0], vh: [6.0, 16.0] }
    }
}

/// Object population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Extent range of target blobs along each principal axis (±2σ).
    pub target_size_m: [f64; 2],
    pub clutter_size_m: [f64; 2],
    pub clutter_snr_db: ChannelSnr,
    pub metal_fraction: f64,
    /// Extra amplitude for metal targets.
    pub metal_gain_db: f64,
    /// Gaussian correlation length of the speckle; 0 gives white speckle.
    pub speckle_corr_m: f64,
    /// Minimum spacing between targets, and between clutter and targets.
    pub min_separation_m: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            target_size_m: [0.2, 1.0],
            clutter_size_m: [0.1, 0.5],
            clutter_snr_db: ChannelSnr::uniform([8.0, 22.0]),
            metal_fraction: 90.0 / 245.0,
            metal_gain_db: 2.0,
            speckle_corr_m: 0.06,
            min_separation_m: 3.0,
        }
    }
}

/// Imaging geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    pub resolution_m: f64,
    /// Down-track extent of one frame.
    pub frame_depth_m: f64,
    /// Down-track distance from the sensor to the frame center.
    pub standoff_m: f64,
    /// Cross-track margin imaged on each side of the lane.
    pub margin_m: f64,
    /// South-west corner of the lane.
    pub origin: Utm,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            resolution_m: 0.03,
            frame_depth_m: 6.0,
            standoff_m: 5.0,
            margin_m: 1.5,
            origin: Utm::new(350_000.0, 3_500_000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub lane_id: String,
    pub length_m: f64,
    pub width_m: f64,
    pub n_targets: usize,
    #[serde(default)]
    pub target_snr_db: ChannelSnr,
    /// Clutter objects per square metre.
    #[serde(default = "default_clutter_density")]
    pub clutter_density: f64,
    #[serde(default = "default_frame_spacing")]
    pub frame_spacing_m: f64,
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneParams,
    #[serde(default)]
    pub sensor: SensorParams,
}

fn default_clutter_density() -> f64 {
    0.04
}

fn default_frame_spacing() -> f64 {
    2.0
}

/// Default lane width used by the Table-1-sized presets.
pub const DEFAULT_LANE_WIDTH_M: f64 = 6.0;

impl LaneSpec {
    pub fn new(lane_id: impl Into<String>, length_m: f64, width_m: f64, n_targets: usize, seed: u64) -> Self {
        Self {
            lane_id: lane_id.into(),
            length_m,
            width_m,
            n_targets,
            target_snr_db: ChannelSnr::default(),
            clutter_density: default_clutter_density(),
            frame_spacing_m: default_frame_spacing(),
            seed,
            scene: SceneParams::default(),
            sensor: SensorParams::default(),
        }
    }

    /// One pass over a test lane with the area and unique-target count of
    /// the field collection (lanes `A`, `B`, `C`).
    pub fn table1(lane: char, seed: u64) -> Result<Self> {
        let (area, targets) = match lane.to_ascii_uppercase() {
            'A' => (3943.0, 28),
            'B' => (3610.0, 23),
            'C' => (2961.0, 27),
            other => return Err(Error::InvalidSpec(format!("no lane `{other}` in the field collection"))),
        };
        Ok(Self::new(
            format!("lane_{}", lane.to_ascii_uppercase()),
            area / DEFAULT_LANE_WIDTH_M,
            DEFAULT_LANE_WIDTH_M,
            targets,
            seed,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sensor;
        let bad = |m: &str| Err(Error::InvalidSpec(format!("{}: {m}", self.lane_id)));
        if !(self.length_m > 0.0 && self.width_m > 0.0) {
            return bad("length_m and width_m must be positive");
        }
        if !(self.frame_spacing_m > 0.0) {
            return bad("frame_spacing_m must be positive");
        }
        if !(s.resolution_m > 0.0) {
            return bad("resolution_m must be positive");
        }
        if !(s.frame_depth_m > 0.0) || self.frame_spacing_m > s.frame_depth_m / 2.0 {
            return bad("frame_spacing_m must not exceed half the frame depth (multi-look)");
        }
        if self.clutter_density < 0.0 || s.margin_m < 0.0 || self.scene.speckle_corr_m < 0.0 {
            return bad("densities, margins and correlation lengths must be non-negative");
        }
        for r in [self.scene.target_size_m, self.scene.clutter_size_m] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return bad("size ranges must satisfy 0 < low <= high");
            }
        }
        for ch in Channel::ALL {
            for r in [self.target_snr_db.get(ch), self.scene.clutter_snr_db.get(ch)] {
                if !(r[1] >= r[0]) {
                    return bad("SNR ranges must satisfy low <= high");
                }
            }
        }
        Ok(())
    }

    /// Lane rectangle, snapped to whole pixels.
    pub fn bounds(&self) -> Bounds {
        let res = self.sensor.resolution_m;
        let w = (self.width_m / res).round().max(1.0) * res;
        let l = (self.length_m / res).round().max(1.0) * res;
        let o = self.sensor.origin;
        Bounds { min: o, max: o.offset(w, l) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub channel: Channel,
    /// Row = down-track (northing), column = cross-track (easting).
    pub pixels: Array2<Complex32>,
    pub geometry: GridGeometry,
    pub standoff_m: f64,
}

impl Frame {
    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn resolution_m(&self) -> f64 {
        self.geometry.resolution_m
    }

    pub fn center_utm(&self) -> Utm {
        self.geometry.pixel_to_utm(
            (self.rows() as f64 - 1.0) / 2.0,
            (self.cols() as f64 - 1.0) / 2.0,
        )
    }

    /// Northing of the sensor when this frame was formed.
    pub fn sensor_northing(&self) -> f64 {
        self.center_utm().northing - self.standoff_m
    }

    /// Whether `p` falls on a pixel of this frame.
    pub fn covers(&self, p: &Utm) -> bool {
        self.geometry.nearest_pixel(p, self.rows(), self.cols()).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetalClass {
    #[serde(rename = "metal")]
    Metal,
    #[serde(rename = "low-metal")]
    LowMetal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTarget {
    pub target_id: String,
    pub utm: Utm,
    pub metal_class: MetalClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub spec: LaneSpec,
    /// Frames of all channels, grouped by channel in `Channel::ALL` order.
    pub frames: Vec<Frame>,
    pub truth: Vec<GroundTruthTarget>,
}

impl Lane {
    pub fn bounds(&self) -> Bounds {
        self.spec.bounds()
    }

    pub fn area_m2(&self) -> f64 {
        self.bounds().area()
    }

    pub fn frames(&self, ch: Channel) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.channel == ch)
    }

    pub fn has_channel(&self, ch: Channel) -> bool {
        self.frames.iter().any(|f| f.channel == ch)
    }
}

/// A planted reflector: target or clutter.
#[derive(Debug, Clone)]
struct Scatterer {
    utm: Utm,
    /// Peak amplitude per channel (linear).
    amplitude: [f64; 3],
    sigma_major: f64,
    sigma_minor: f64,
    angle: f64,
}

fn uniform_in<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn place<R: Rng>(rng: &mut R, b: &Bounds, inset: f64, avoid: &[Utm], min_sep: f64) -> Utm {
    let inset = inset.min(b.width() / 4.0).min(b.length() / 4.0);
    let mut p = Utm::default();
    for _ in 0..1000 {
        p = Utm::new(
            rng.random_range(b.min.easting + inset..=b.max.easting - inset),
            rng.random_range(b.min.northing + inset..=b.max.northing - inset),
        );
        if avoid.iter().all(|q| q.distance(&p) >= min_sep) {
            break;
        }
    }
    p
}

fn draw_blob<R: Rng>(rng: &mut R, size: [f64; 2]) -> (f64, f64, f64) {
    let a = uniform_in(rng, size) / 4.0;
    let b = uniform_in(rng, size) / 4.0;
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    (a.max(b), a.min(b), angle)
}

/// Unit-energy 1-D Gaussian taps (sum of squares = 1) so smoothing
/// preserves the speckle power.
fn speckle_kernel(sigma_px: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_px).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let energy = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.into_iter().map(|t| t / energy).collect()
}

fn speckle<R: Rng>(rng: &mut R, rows: usize, cols: usize, sigma_px: f64) -> Array2<(f64, f64)> {
    // Unit power: E|n|² = 1.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let draw = |rng: &mut R| -> (f64, f64) {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        (re * s, im * s)
    };
    if sigma_px < 0.25 {
        return Array2::from_shape_simple_fn((rows, cols), || draw(rng));
    }
    let k = speckle_kernel(sigma_px);
    let r = k.len() / 2;
    let white = Array2::from_shape_simple_fn((rows + 2 * r, cols + 2 * r), || draw(rng));
    // Separable valid convolution: along columns, then along rows.
    let mut tmp = Array2::<(f64, f64)>::from_elem((rows + 2 * r, cols), (0.0, 0.0));
    for i in 0..rows + 2 * r {
        for j in 0..cols {
            let (mut a, mut b) = (0.0, 0.0);
            for (t, w) in k.iter().enumerate() {
                let v = white[[i, j + t]];
                a += w * v.0;
                b += w * v.1;
            }
            tmp[[i, j]] = (a, b);
        }
    }
    let mut out = Array2::<(f64, f64)>::from_elem((rows, cols), (0.0, 0.0));
    for i in 0..rows {
        for j in 0..cols {
            let (mut a, mut b) = (0.0, 0.0);
            for (t, w) in k.iter().enumerate() {
                let v = tmp[[i + t, j]];
                a += w * v.0;
                b += w * v.1;
            }
            out[[i, j]] = (a, b);
        }
    }
    out
}

fn render_frame(spec: &LaneSpec, ch: Channel, index: usize, center_n: f64, objects: &[Scatterer]) -> Frame {
    let s = &spec.sensor;
    let res = s.resolution_m;
    let bounds = spec.bounds();
    let rows = (s.frame_depth_m / res).round() as usize;
    let cols = ((bounds.width() + 2.0 * s.margin_m) / res).round() as usize;
    let geometry = GridGeometry {
        origin: Utm::new(
            bounds.min.easting - s.margin_m,
            center_n - (rows as f64 - 1.0) / 2.0 * res,
        ),
        resolution_m: res,
    };
    let mut rng = rng_for(spec.seed, &[0xF4A3E, ch.index() as u64, index as u64]);
    let mut field = speckle(&mut rng, rows, cols, spec.scene.speckle_corr_m / res);

    for obj in objects {
        // Look-dependent phase.
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = obj.amplitude[ch.index()];
        let reach = 4.0 * obj.sigma_major;
        let (r0, c0) = geometry.utm_to_pixel(&obj.utm.offset(-reach, -reach));
        let (r1, c1) = geometry.utm_to_pixel(&obj.utm.offset(reach, reach));
        if r1 < 0.0 || c1 < 0.0 || r0 > rows as f64 - 1.0 || c0 > cols as f64 - 1.0 {
            continue;
        }
        let (ca, sa) = (obj.angle.cos(), obj.angle.sin());
        let (pr, pi) = (amp * phase.cos(), amp * phase.sin());
        for r in r0.max(0.0).floor() as usize..=(r1.ceil() as usize).min(rows - 1) {
            for c in c0.max(0.0).floor() as usize..=(c1.ceil() as usize).min(cols - 1) {
                let p = geometry.pixel_to_utm(r as f64, c as f64);
                let de = p.easting - obj.utm.easting;
                let dn = p.northing - obj.utm.northing;
                let u = ca * de + sa * dn;
                let v = -sa * de + ca * dn;
                let g = (-0.5 * (u * u / (obj.sigma_major * obj.sigma_major)
                    + v * v / (obj.sigma_minor * obj.sigma_minor)))
                    .exp();
                let px = &mut field[[r, c]];
                px.0 += g * pr;
                px.1 += g * pi;
            }
        }
    }

    Frame {
        channel: ch,
        pixels: field.mapv(|(re, im)| Complex32::new(re as f32, im as f32)),
        geometry,
        standoff_m: s.standoff_m,
    }
}

/// Generates a lane with `spec.n_targets` planted targets.
pub fn generate_lane(spec: &LaneSpec) -> Result<Lane> {
    spec.validate()?;
    let bounds = spec.bounds();
    let scene = &spec.scene;
    let mut rng = rng_for(spec.seed, &[0x5CE1E]);

    let mut truth = Vec::with_capacity(spec.n_targets);
    let mut objects = Vec::new();
    let mut positions: Vec<Utm> = Vec::new();
    for i in 0..spec.n_targets {
        let utm = place(&mut rng, &bounds, 0.5, &positions, scene.min_separation_m);
        positions.push(utm);
        let metal = rng.random_bool(scene.metal_fraction.clamp(0.0, 1.0));
        let gain = if metal { scene.metal_gain_db } else { 0.0 };
        let mut amplitude = [0.0; 3];
        for ch in Channel::ALL {
            amplitude[ch.index()] = db_to_amplitude(uniform_in(&mut rng, spec.target_snr_db.get(ch)) + gain);
        }
        let (sigma_major, sigma_minor, angle) = draw_blob(&mut rng, scene.target_size_m);
        objects.push(Scatterer { utm, amplitude, sigma_major, sigma_minor, angle });
        truth.push(GroundTruthTarget {
            target_id: format!("{}-T{:03}", spec.lane_id, i + 1),
            utm,
            metal_class: if metal { MetalClass::Metal } else { MetalClass::LowMetal },
        });
    }

    let n_clutter = (spec.clutter_density * bounds.area()).round() as usize;
    let clutter_sep = (scene.min_separation_m * 2.0 / 3.0).max(0.0);
    for _ in 0..n_clutter {
        let utm = place(&mut rng, &bounds, 0.0, &positions, clutter_sep);
        let mut amplitude = [0.0; 3];
        for ch in Channel::ALL {
            amplitude[ch.index()] = db_to_amplitude(uniform_in(&mut rng, scene.clutter_snr_db.get(ch)));
        }
        let (sigma_major, sigma_minor, angle) = draw_blob(&mut rng, scene.clutter_size_m);
        objects.push(Scatterer { utm, amplitude, sigma_major, sigma_minor, angle });
    }

    let n_frames = (bounds.length() / spec.frame_spacing_m).ceil() as usize + 1;
    let jobs: Vec<(Channel, usize)> = Channel::ALL
        .iter()
        .flat_map(|&ch| (0..n_frames).map(move |k| (ch, k)))
        .collect();
    let frames = jobs
        .par_iter()
        .map(|&(ch, k)| {
            let center = bounds.min.northing + k as f64 * spec.frame_spacing_m;
            render_frame(spec, ch, k, center, &objects)
        })
        .collect();

    Ok(Lane { spec: spec.clone(), frames, truth })
}

const LANE_MAGIC: &[u8; 8] = b"FLGPRLAN";
const LANE_VERSION: u32 = 1;

/// Ground-truth sidecar written next to a lane file: `x.lane` → `x.truth.csv`.
pub fn truth_path(lane_path: &Path) -> PathBuf {
    lane_path.with_extension("truth.csv")
}

/// Writes the binary lane container and its truth CSV sidecar.
///
/// Layout (little-endian): magic `FLGPRLAN`, `u32` version, `u32` length +
/// UTF-8 JSON of the lane spec, `u32` frame count, then per frame: `u8`
/// channel (0 HH, 1 VV, 2 VH), `u32` rows, `u32` cols, `f64` resolution,
/// `f64` origin easting, `f64` origin northing, `f64` standoff, and
/// `rows·cols` interleaved `f32` (re, im) pairs in row-major order.
pub fn write_lane(lane: &Lane, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LANE_MAGIC)?;
    w.write_u32::<LittleEndian>(LANE_VERSION)?;
    let spec = serde_json::to_vec(&lane.spec).map_err(|e| Error::Format(e.to_string()))?;
    w.write_u32::<LittleEndian>(spec.len() as u32)?;
    w.write_all(&spec)?;
    w.write_u32::<LittleEndian>(lane.frames.len() as u32)?;
    for f in &lane.frames {
        w.write_u8(f.channel.index() as u8)?;
        w.write_u32::<LittleEndian>(f.rows() as u32)?;
        w.write_u32::<LittleEndian>(f.cols() as u32)?;
        w.write_f64::<LittleEndian>(f.geometry.resolution_m)?;
        w.write_f64::<LittleEndian>(f.geometry.origin.easting)?;
        w.write_f64::<LittleEndian>(f.geometry.origin.northing)?;
        w.write_f64::<LittleEndian>(f.standoff_m)?;
        for px in f.pixels.iter() {
            w.write_f32::<LittleEndian>(px.re)?;
            w.write_f32::<LittleEndian>(px.im)?;
        }
    }
    w.flush()?;
    write_truth_csv(&lane.truth, &truth_path(path))
}

pub fn read_lane(path: &Path) -> Result<Lane> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != LANE_MAGIC {
        return Err(Error::Format(format!("{}: not a lane file (bad magic)", path.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != LANE_VERSION {
        return Err(Error::Format(format!("{}: unsupported lane version {version}", path.display())));
    }
    let spec_len = r.read_u32::<LittleEndian>()? as usize;
    let mut spec = vec![0u8; spec_len];
    r.read_exact(&mut spec)?;
    let spec: LaneSpec = serde_json::from_slice(&spec).map_err(|e| Error::Format(format!("lane spec: {e}")))?;
    let n_frames = r.read_u32::<LittleEndian>()? as usize;
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let code = r.read_u8()?;
        let channel = Channel::from_index(code as usize)
            .ok_or_else(|| Error::Format(format!("bad channel code {code}")))?;
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let resolution_m = r.read_f64::<LittleEndian>()?;
        let e = r.read_f64::<LittleEndian>()?;
        let n = r.read_f64::<LittleEndian>()?;
        let standoff_m = r.read_f64::<LittleEndian>()?;
        if !(resolution_m > 0.0) {
            return Err(Error::Format(format!("non-positive frame resolution {resolution_m}")));
        }
        let mut raw = vec![0f32; rows * cols * 2];
        r.read_f32_into::<LittleEndian>(&mut raw)?;
        let px: Vec<Complex32> = raw.chunks_exact(2).map(|c| Complex32::new(c[0], c[1])).collect();
        let pixels = Array2::from_shape_vec((rows, cols), px).map_err(|e| Error::Format(e.to_string()))?;
        frames.push(Frame {
            channel,
            pixels,
            geometry: GridGeometry { origin: Utm::new(e, n), resolution_m },
            standoff_m,
        });
    }
    let truth = read_truth_csv(&truth_path(path))?;
    Ok(Lane { spec, frames, truth })
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    target_id: String,
    easting_m: f64,
    northing_m: f64,
    metal_class: MetalClass,
}

/// Columns: `target_id, easting_m, northing_m, metal_class`.
pub fn write_truth_csv(truth: &[GroundTruthTarget], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["target_id", "easting_m", "northing_m", "metal_class"])?;
    for t in truth {
        w.serialize(TruthRow {
            target_id: t.target_id.clone(),
            easting_m: t.utm.easting,
            northing_m: t.utm.northing,
            metal_class: t.metal_class,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<GroundTruthTarget>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<TruthRow>()
        .map(|row| {
            let row = row?;
            Ok(GroundTruthTarget {
                target_id: row.target_id,
                utm: Utm::new(row.easting_m, row.northing_m),
                metal_class: row.metal_class,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n_targets: usize, seed: u64) -> LaneSpec {
        LaneSpec::new("t", 20.0, 4.0, n_targets, seed)
    }

    #[test]
    fn truth_count_matches_spec() {
        let mut spec = LaneSpec::new("t", 60.0, 60.0, 25, 3);
        spec.clutter_density = 0.0;
        spec.scene.speckle_corr_m = 0.0;
        spec.frame_spacing_m = 3.0;
        let lane = generate_lane(&spec).unwrap();
        assert_eq!(lane.truth.len(), 25);
        for t in &lane.truth {
            assert!(lane.bounds().contains(&t.utm));
        }
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        let mut spec = small_spec(1, 1);
        spec.width_m = 0.0;
        assert!(matches!(generate_lane(&spec), Err(Error::InvalidSpec(_))));
        let mut spec = small_spec(1, 1);
        spec.frame_spacing_m = -1.0;
        assert!(matches!(generate_lane(&spec), Err(Error::InvalidSpec(_))));
        let mut spec = small_spec(1, 1);
        spec.frame_spacing_m = 4.0;
        assert!(matches!(generate_lane(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(3, 11);
        let a = generate_lane(&spec).unwrap();
        let b = generate_lane(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_lane(&small_spec(3, 12)).unwrap();
        assert_ne!(a.frames[0].pixels, c.frames[0].pixels);
    }

    #[test]
    fn every_lane_point_is_multi_look_and_channels_align() {
        let lane = generate_lane(&small_spec(2, 5)).unwrap();
        let b = lane.bounds();
        for i in 0..=20 {
            for j in 0..=4 {
                let p = Utm::new(
                    b.min.easting + b.width() * j as f64 / 4.0,
                    b.min.northing + b.length() * i as f64 / 20.0,
                );
                for ch in Channel::ALL {
                    assert!(lane.frames(ch).filter(|f| f.covers(&p)).count() >= 2, "{p:?} {ch}");
                }
            }
        }
        let hh: Vec<_> = lane.frames(Channel::HH).map(|f| f.geometry).collect();
        let vh: Vec<_> = lane.frames(Channel::VH).map(|f| f.geometry).collect();
        assert_eq!(hh, vh);
    }

    #[test]
    fn table1_lane_a_area() {
        let spec = LaneSpec::table1('A', 0).unwrap();
        let b = spec.bounds();
        let res = spec.sensor.resolution_m;
        // Each dimension is snapped to whole pixels.
        assert!((b.width() - spec.width_m).abs() <= res / 2.0 + 1e-12);
        assert!((b.length() - spec.length_m).abs() <= res / 2.0 + 1e-12);
        assert!((b.area() - 3943.0).abs() <= res * (b.width() + b.length()));
        assert_eq!(spec.n_targets, 28);
    }

    #[test]
    fn channel_scale_ordering_holds_on_average() {
        let d = ChannelSnr::default();
        let mid = |r: [f64; 2]| (r[0] + r[1]) / 2.0;
        assert!(mid(d.hh) >= mid(d.vv) && mid(d.vv) >= mid(d.vh));
    }

    #[test]
    fn channel_names_parse() {
        for ch in Channel::ALL {
            assert_eq!(ch.name().parse::<Channel>().unwrap(), ch);
        }
        assert_eq!("hv".parse::<Channel>().unwrap(), Channel::VH);
        assert!("XX".parse::<Channel>().is_err());
    }

    #[test]
    fn speckle_has_unit_power() {
        let mut rng = rng_for(1, &[]);
        let f = speckle(&mut rng, 200, 200, 2.0);
        let p: f64 = f.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / f.len() as f64;
        assert!((p - 1.0).abs() < 0.1, "{p}");
    }
}
