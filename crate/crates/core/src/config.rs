//! TOML run configuration.
//!
//! ```toml
//! [ae]
//! hidden_enc = 128
//! codebook_size = 256
//!
//! [ae_train]
//! steps = 2000
//! lr = 1e-3
//!
//! [gen]
//! layers = 6
//!
//! [gen_train]
//! steps = 1000
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so typos surface immediately.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AEConfig;
use crate::generator::GenConfig;
use crate::nn::AdamW;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Target total step count; a resumed run stops here too.
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    pub warmup_steps: u64,
    /// Auto-encoder only: steps with the quantizer bypassed.
    pub plain_steps: u64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            lr: AdamW::default().lr,
            weight_decay: AdamW::default().weight_decay,
            clip: 1.0,
            warmup_steps: 0,
            plain_steps: 100,
            seed: 0,
            log_every: 50,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn clip(&self) -> Option<f64> {
        (self.clip > 0.0).then_some(self.clip)
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{section}.batch_size must be positive"
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{section}.lr must be positive")));
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(format!(
                "{section}.log_every and checkpoint_every must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ae: AEConfig,
    pub ae_train: TrainConfig,
    pub gen: GenConfig,
    pub gen_train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ae.validate()?;
        self.gen.validate()?;
        self.ae_train.validate("ae_train")?;
        self.gen_train.validate("gen_train")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.ae_train.steps = 7;
        cfg.gen.hidden = 64;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[ae_train]\nstpes = 3\n").unwrap_err();
        assert!(err.to_string().contains("stpes"), "{err}");
    }
}
