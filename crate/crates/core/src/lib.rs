pub mod classifiers;
pub mod confmap;
pub mod dataset;
pub mod encoders;
pub mod evaluation;
pub mod error;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod patch;
pub mod pipeline;
pub mod prescreener;
pub mod record;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single- and double-precision instantiations of the scalar-generic types.
/// Lane imagery is stored as `f32`, so `f32` is the working precision of the
/// full pipeline; `f64` serves oracles and small problems.
pub type Classifier32 = classifiers::Classifier<f32>;
pub type Classifier64 = classifiers::Classifier<f64>;
pub type BovDictionary32 = encoders::BovDictionary<f32>;
pub type BovDictionary64 = encoders::BovDictionary<f64>;
pub type FvCodebook32 = encoders::FvCodebook<f32>;
pub type FvCodebook64 = encoders::FvCodebook<f64>;
pub type LaneFeatures32 = pipeline::LaneFeatures<f32>;
pub type LaneFeatures64 = pipeline::LaneFeatures<f64>;
pub type PreparedLane32 = pipeline::PreparedLane<f32>;
pub type PreparedLane64 = pipeline::PreparedLane<f64>;
pub type FoldModel32 = pipeline::FoldModel<f32>;
pub type FoldModel64 = pipeline::FoldModel<f64>;
