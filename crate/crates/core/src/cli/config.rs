use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::optim::OptimizerKind;
use crate::racdnn::{Preset, StageOptions, DEFAULT_ITERATIONS};
use crate::{Error, Result};

/// Environment variable that overrides the seed from flags or config files.
pub const SEED_ENV: &str = "RACDNN_SEED";

/// Everything a run needs besides its inputs. Loaded from a JSON file with
/// `--config`; explicit flags take precedence. Paths are not part of
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub init_optimizer: OptimizerKind,
    pub init_lr: f64,
    pub init_epochs: usize,
    pub refine_optimizer: OptimizerKind,
    pub refine_lr: f64,
    pub refine_epochs: usize,
    #[serde(skip_serializing)]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub init_ckpt: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out_ckpt: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "toy".into(),
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            batch_size: 8,
            augment: true,
            init_optimizer: OptimizerKind::adam(),
            init_lr: 1e-3,
            init_epochs: 10,
            refine_optimizer: OptimizerKind::rmsprop(),
            refine_lr: 1e-4,
            refine_epochs: 10,
            data: None,
            init_ckpt: None,
            out_ckpt: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Deterministic JSON without paths.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be >= 2 for training-mode batch normalization",
                self.batch_size
            )));
        }
        for lr in [self.init_lr, self.refine_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
            }
        }
        Preset::by_name(&self.preset).map(|_| ())
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::by_name(&self.preset)
    }

    /// Applies `RACDNN_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn initial_stage(&self) -> StageOptions {
        StageOptions {
            optimizer: self.init_optimizer,
            epochs: self.init_epochs,
            batch_size: self.batch_size,
            lr: self.init_lr,
            seed: self.seed,
            augment: self.augment,
        }
    }

    pub fn refine_stage(&self) -> StageOptions {
        StageOptions {
            optimizer: self.refine_optimizer,
            epochs: self.refine_epochs,
            batch_size: self.batch_size,
            lr: self.refine_lr,
            seed: self.seed,
            augment: self.augment,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_skips_paths() {
        let mut cfg = RunConfig {
            data: Some("/tmp/x".into()),
            ..RunConfig::default()
        };
        cfg.refine_lr = 3e-4;
        let json = cfg.to_json();
        assert!(!json.contains("/tmp/x"));
        let back = RunConfig::from_json(&json).unwrap();
        cfg.data = None;
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 5, "iterations": 3}"#).unwrap();
        assert_eq!((cfg.seed, cfg.iterations, cfg.batch_size), (5, 3, 8));
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::from_json(r#"{"iterations": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"batch_size": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset": "huge"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"colour": 1}"#).is_err());
    }
}
