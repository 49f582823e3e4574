//! Strict experiment configuration and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::fem::FemConfig;
use crate::datagen::sensors::SensorLayout;
use crate::datagen::ForcingsConfig;
use crate::error::{Error, Result};
use crate::graph::ThermalGraph;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.7,
            valid: 0.15,
            test: 0.15,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train, self.valid, self.test)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation as a fraction of the mean clean temperature.
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: ThermalGraph,
    #[serde(default)]
    pub fem: Option<FemConfig>,
    #[serde(default)]
    pub forcings: Option<ForcingsConfig>,
    #[serde(default)]
    pub sensors: Option<SensorLayout>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses with strict field checking; errors name the offending path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.as_ref().display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return Err(Error::Config(format!(
                "noise.level must be non-negative, got {}",
                self.noise.level
            )));
        }
        if let Some(fem) = &self.fem {
            fem.validate()?;
            if let Some(layout) = &self.sensors {
                layout.validate(fem)?;
                if layout.len() != self.graph.node_count() {
                    return Err(Error::Config(format!(
                        "{} sensors configured for a graph with {} nodes",
                        layout.len(),
                        self.graph.node_count()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Generation sections, or a config error naming the missing one.
    pub fn generation(&self) -> Result<(&FemConfig, &ForcingsConfig, &SensorLayout)> {
        let missing = |s: &str| Error::Config(format!("section {s} is required to generate data"));
        Ok((
            self.fem.as_ref().ok_or_else(|| missing("fem"))?,
            self.forcings.as_ref().ok_or_else(|| missing("forcings"))?,
            self.sensors.as_ref().ok_or_else(|| missing("sensors"))?,
        ))
    }

    /// SHA-256 of the canonical JSON serialization, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = default_output_dir();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "graph": {"nodes": [{"id": 0, "kind": "internal"}, {"id": 1, "kind": "internal"}],
                  "edges": [{"i": 0, "j": 1}]}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.split, SplitConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.noise.level, 0.0);
        assert!(cfg.generation().is_err());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let text = MINIMAL.replace(r#""edges""#, r#""edgez""#);
        let err = ExperimentConfig::from_json_str(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("graph"), "{err}");
        let text = MINIMAL.trim_end().trim_end_matches('}').to_string()
            + r#", "train": {"lr": 0.1, "lrr": 1}}"#;
        let err = ExperimentConfig::from_json_str(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("train") && err.contains("lrr"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.lr = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
