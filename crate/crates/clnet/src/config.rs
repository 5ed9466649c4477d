//! Run configuration (JSON) and its content hash.

use std::path::{Path, PathBuf};

use clnet_core::encoder::EncoderConfig;
use clnet_core::objective::Direction;
use clnet_core::synth::{PairMode, RenderSizes, SceneParams};
use clnet_core::{AblationPreset, ModelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "CLNET_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// `None`: 5% of the total step count.
    pub warmup_steps: Option<usize>,
    pub tau: f64,
    pub learnable_tau: bool,
    pub direction: Direction,
    pub preset: AblationPreset,
    /// Random synchronized rotation/flip of every training pair.
    pub augment: bool,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            base_lr: 0.001,
            weight_decay: 0.01,
            warmup_steps: None,
            tau: 0.07,
            learnable_tau: false,
            direction: Direction::Symmetric,
            preset: AblationPreset::FULL,
            augment: true,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, pairs: usize) -> usize {
        pairs / self.batch_size.max(1)
    }

    pub fn warmup_for(&self, total_steps: usize) -> usize {
        self.warmup_steps.unwrap_or(total_steps / 20)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_train_pairs")]
        train_pairs: usize,
        #[serde(default = "default_eval_pairs")]
        eval_pairs: usize,
        #[serde(default)]
        mode: PairMode,
        #[serde(default)]
        scene: SceneParams,
    },
    Directory {
        train_manifest: PathBuf,
        eval_manifest: Option<PathBuf>,
    },
}

fn default_train_pairs() -> usize {
    512
}

fn default_eval_pairs() -> usize {
    128
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            seed: 0,
            train_pairs: default_train_pairs(),
            eval_pairs: default_eval_pairs(),
            mode: PairMode::CenterAligned,
            scene: SceneParams::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            preset: self.train.preset,
        }
    }

    pub fn render_sizes(&self) -> RenderSizes {
        RenderSizes {
            ground: self.encoder.ground_input_hw,
            satellite: self.encoder.satellite_input_hw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let t = &self.train;
        if t.epochs == 0 {
            return Err(Error::Validation("train.epochs must be at least 1".into()));
        }
        if t.batch_size < 2 {
            return Err(Error::Validation("train.batch_size must be at least 2".into()));
        }
        if !(t.base_lr > 0.0 && t.base_lr.is_finite()) {
            return Err(Error::Validation(format!(
                "train.base_lr must be positive, got {}",
                t.base_lr
            )));
        }
        if !(t.tau > 0.0 && t.tau.is_finite()) {
            return Err(Error::Validation(format!("train.tau must be positive, got {}", t.tau)));
        }
        if !(t.weight_decay >= 0.0) {
            return Err(Error::Validation("train.weight_decay must be non-negative".into()));
        }
        if let DataConfig::Synthetic {
            train_pairs,
            eval_pairs,
            ..
        } = &self.data
        {
            if *train_pairs < t.batch_size {
                return Err(Error::Validation(format!(
                    "{train_pairs} training pairs cannot fill a batch of {}",
                    t.batch_size
                )));
            }
            if *eval_pairs == 0 {
                return Err(Error::Validation("data.eval_pairs must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form with keys sorted.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r##"{"seed": 4, "train": {"epochs": 3, "preset": "#2"}}"##).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.preset, AblationPreset::P2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"tau": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"encoder": {"stage_channels": [4, 4, 8, 16]}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
