//! Run configuration: flat TOML, one `key = value` per line.
//!
//! Every reservoir hyperparameter plus `batch_size`, `min_len` and `max_len`
//! must be given explicitly. Optimizer keys default to the usual AdamW
//! defaults. Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use esn_core::data::LengthFilter;
use esn_core::{Activation, AdamWConfig, PairScoring, ReservoirHyperparams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_lr() -> f64 {
    AdamWConfig::default().learning_rate
}
fn default_beta1() -> f64 {
    AdamWConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamWConfig::default().beta2
}
fn default_epsilon() -> f64 {
    AdamWConfig::default().epsilon
}
fn default_weight_decay() -> f64 {
    AdamWConfig::default().weight_decay
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Reservoir.
    pub state_size: usize,
    pub vocab_size: usize,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub rec_degree: usize,
    pub leak_min: f64,
    pub leak_max: f64,
    pub activation: Activation,
    pub output_rank: usize,
    pub seed: u64,

    // Optimizer.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_true")]
    pub decay_bias: bool,

    // Data.
    pub batch_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_tags: Option<PathBuf>,
    #[serde(default)]
    pub pair_scoring: PairScoring,

    /// Overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    /// Write a checkpoint every this many batches; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl RunConfig {
    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|reason| CliError::config(path, reason))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_manifest,
            &mut cfg.valid_manifest,
            &mut cfg.pairs,
            &mut cfg.pair_tags,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate().map_err(|e| CliError::config(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyperparams(&self) -> ReservoirHyperparams {
        ReservoirHyperparams {
            state_size: self.state_size,
            vocab_size: self.vocab_size,
            spectral_radius: self.spectral_radius,
            input_scale: self.input_scale,
            rec_degree: self.rec_degree,
            leak_min: self.leak_min,
            leak_max: self.leak_max,
            activation: self.activation,
            output_rank: self.output_rank,
            seed: self.seed,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            decay_bias: self.decay_bias,
        }
    }

    pub fn length_filter(&self) -> LengthFilter {
        LengthFilter {
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed.unwrap_or(self.seed)
    }

    /// Checks every invariant that does not involve the filesystem.
    pub fn validate(&self) -> esn_core::Result<()> {
        self.hyperparams().validate()?;
        self.optimizer().validate()?;
        self.length_filter().validate()?;
        if self.batch_size == 0 {
            return Err(esn_core::EsnError::InvalidArgument(
                "batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Fails with a path diagnostic if a referenced file is missing.
    pub fn require_path<'a>(&self, key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` is required for this command")))?;
        if !p.exists() {
            return Err(CliError::config(p, format!("`{key}` does not exist")));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SETUP: &str = r#"
state_size = 4096
vocab_size = 50257
spectral_radius = 0.99
input_scale = 1.0
rec_degree = 32
leak_min = 0.0
leak_max = 1.0
activation = "tanh"
output_rank = 512
seed = 0
batch_size = 32
min_len = 6
max_len = 512
"#;

    #[test]
    fn parses_with_optimizer_defaults() {
        let cfg = RunConfig::parse(SETUP).unwrap();
        assert_eq!(cfg.optimizer(), AdamWConfig::default());
        assert_eq!(cfg.shuffle_seed(), 0);
        cfg.validate().unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn every_fixed_hyperparameter_is_required() {
        for key in [
            "spectral_radius",
            "input_scale",
            "rec_degree",
            "leak_min",
            "leak_max",
            "activation",
            "output_rank",
            "batch_size",
            "min_len",
            "max_len",
        ] {
            let text: String = SETUP
                .lines()
                .filter(|l| !l.starts_with(&format!("{key} ")))
                .collect::<Vec<_>>()
                .join("\n");
            let err = RunConfig::parse(&text).unwrap_err();
            assert!(err.contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::parse(&format!("{SETUP}\nfoo = 1\n")).is_err());
        let cfg = RunConfig::parse(&SETUP.replace("rec_degree = 32", "rec_degree = 0")).unwrap();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::parse(&SETUP.replace("\"tanh\"", "\"relu\"")).is_err());
    }
}
