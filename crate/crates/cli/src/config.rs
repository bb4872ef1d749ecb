//! Experiment configuration: one TOML file drives every stage.
//!
//! `seed` and the lane list are mandatory; every other table falls back to
//! the library defaults. Unknown keys and type errors are rejected with the
//! dotted path of the offending field.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use flgpr_core::classifiers::ClassifierKind;
use flgpr_core::dataset::{Channel, LaneSpec};
use flgpr_core::features::FeatureKind;
use flgpr_core::fusion::FusionParams;
use flgpr_core::pipeline::{Algorithm, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed of every stochastic stage; lane seeds are mixed into it.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub lanes: Vec<LaneSpec>,
    #[serde(default = "all_channels")]
    pub channels: Vec<Channel>,
    #[serde(default = "all_features")]
    pub features: Vec<FeatureKind>,
    #[serde(default = "all_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub fusion: FusionParams,
    #[serde(default)]
    pub confmap: ConfmapConfig,
}

/// Which trained BOV(Raw) + PLSDA fold model the confidence maps explain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfmapConfig {
    pub channel: Channel,
    /// Fold whose held-out lane is mapped.
    pub fold: usize,
    /// Highest-confidence alarms of the held-out lane to map.
    pub top_alarms: usize,
    /// Scale factor from map cells to PNG pixels.
    pub png_scale: u32,
}

impl Default for ConfmapConfig {
    fn default() -> Self {
        Self { channel: Channel::HH, fold: 0, top_alarms: 8, png_scale: 8 }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_channels() -> Vec<Channel> {
    Channel::ALL.to_vec()
}

fn all_features() -> Vec<FeatureKind> {
    FeatureKind::ALL.to_vec()
}

fn all_classifiers() -> Vec<ClassifierKind> {
    ClassifierKind::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        let mut unknown = Vec::new();
        let mut note = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
        let de = serde_ignored::Deserializer::new(de, &mut note);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner().message().trim())
        })?;
        if let Some(path) = unknown.first() {
            bail!("config field `{path}`: unknown field");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.lanes.len() < 2 {
            bail!("config field `lanes`: lane cross-validation needs at least 2 lanes, got {}", self.lanes.len());
        }
        let mut ids = HashSet::new();
        for (i, l) in self.lanes.iter().enumerate() {
            if !ids.insert(l.lane_id.as_str()) {
                bail!("config field `lanes[{i}].lane_id`: duplicate lane id `{}`", l.lane_id);
            }
            if l.lane_id.is_empty() || !l.lane_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                bail!("config field `lanes[{i}].lane_id`: `{}` must be non-empty [A-Za-z0-9_-]", l.lane_id);
            }
            l.validate().map_err(|e| anyhow::anyhow!("config field `lanes[{i}]`: {e}"))?;
        }
        for (name, empty) in [("channels", self.channels.is_empty()), ("features", self.features.is_empty()), ("classifiers", self.classifiers.is_empty())] {
            if empty {
                bail!("config field `{name}`: must list at least one entry");
            }
        }
        if !self.channels.contains(&self.confmap.channel) {
            bail!("config field `confmap.channel`: {} is not among the configured channels", self.confmap.channel);
        }
        if self.confmap.fold >= self.lanes.len() {
            bail!("config field `confmap.fold`: {} but there are {} folds", self.confmap.fold, self.lanes.len());
        }
        let e = &self.pipeline.eval;
        if !(e.far_max > 0.0 && e.halo_m > 0.0) {
            bail!("config field `pipeline.eval`: far_max and halo_m must be positive");
        }
        if self.fusion.max_nf == 0 || self.fusion.inner_folds < 2 {
            bail!("config field `fusion`: max_nf ≥ 1 and inner_folds ≥ 2 required");
        }
        Ok(())
    }

    /// Configured first-stage algorithms in grid order.
    pub fn algorithms(&self) -> Vec<Algorithm> {
        Algorithm::grid(&self.channels, &self.features, &self.classifiers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[[lanes]]
lane_id = "a"
length_m = 20.0
width_m = 4.0
n_targets = 3
seed = 1
[[lanes]]
lane_id = "b"
length_m = 20.0
width_m = 4.0
n_targets = 3
seed = 2
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.algorithms().len(), 81);
        assert_eq!(cfg.pipeline, PipelineConfig::default());
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn round_trips_losslessly() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::parse(&MINIMAL.replacen("seed = 3", "", 1)).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn errors_carry_the_field_path() {
        let bad = MINIMAL.to_string() + "[pipeline.bov]\nk = \"thirty\"\n";
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("pipeline.bov.k"), "{err}");
        let unknown = MINIMAL.to_string() + "[fusion]\nmax_nff = 3\n";
        let err = ExperimentConfig::parse(&unknown).unwrap_err().to_string();
        assert!(err.contains("fusion.max_nff"), "{err}");
        let kind = MINIMAL.replacen("seed = 3", "seed = 3\nfeatures = [\"sift\", \"hog\"]", 1);
        let err = ExperimentConfig::parse(&kind).unwrap_err().to_string();
        assert!(err.contains("features"), "{err}");
    }

    #[test]
    fn rejects_duplicate_lanes() {
        let dup = MINIMAL.replace("lane_id = \"b\"", "lane_id = \"a\"");
        let err = ExperimentConfig::parse(&dup).unwrap_err().to_string();
        assert!(err.contains("lanes[1].lane_id"), "{err}");
    }
}
