//! Experiment configuration: a flat `key = value` file with defaults,
//! strict parsing (unknown keys are rejected), and a deterministic echo
//! used in run manifests.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::Variant;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("config key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("config: {0}")]
    Invalid(String),
}

/// All knobs of a training/evaluation run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub variant: Variant,
    pub spm_layers: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dk: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub mlp_hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 trains on every train pair each epoch; otherwise each epoch visits
    /// this many pairs of the (re)shuffled stream.
    pub pairs_per_epoch: usize,
    /// Validation cadence in epochs; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub include_self_pairs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            variant: Variant::Dual,
            spm_layers: 1,
            hidden: 64,
            layers: 3,
            dk: 64,
            conv_layers: 2,
            conv_channels: 8,
            mlp_hidden: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            epochs: 200,
            pairs_per_epoch: 0,
            eval_every: 10,
            include_self_pairs: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual form; used by both the file parser and
    /// CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| ConfigError::BadValue { key: key.to_string(), value: value.to_string() })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "variant" => {
                self.variant = Variant::parse(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?
            }
            "spm_layers" => self.spm_layers = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dk" => self.dk = parse(key, value)?,
            "conv_layers" => self.conv_layers = parse(key, value)?,
            "conv_channels" => self.conv_channels = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "pairs_per_epoch" => self.pairs_per_epoch = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "include_self_pairs" => self.include_self_pairs = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden == 0 || self.dk == 0 {
            return Err(ConfigError::Invalid("hidden and dk must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.conv_channels == 0 && self.conv_layers > 0 {
            return Err(ConfigError::Invalid("conv_channels must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ConfigError::Invalid(format!("lr {} must be >= 0", self.lr)));
        }
        Ok(())
    }

    /// Deterministic `key = value` listing, one per line, for manifests.
    pub fn echo(&self) -> String {
        let mut lines = vec![
            format!("batch_size = {}", self.batch_size),
            format!("beta1 = {}", self.beta1),
            format!("beta2 = {}", self.beta2),
            format!("conv_channels = {}", self.conv_channels),
            format!("conv_layers = {}", self.conv_layers),
            format!("dk = {}", self.dk),
            format!("epochs = {}", self.epochs),
            format!("eps = {}", self.eps),
            format!("eval_every = {}", self.eval_every),
            format!("hidden = {}", self.hidden),
            format!("include_self_pairs = {}", self.include_self_pairs),
            format!("layers = {}", self.layers),
            format!("lr = {}", self.lr),
            format!("mlp_hidden = {}", self.mlp_hidden),
            format!("pairs_per_epoch = {}", self.pairs_per_epoch),
            format!("seed = {}", self.seed),
            format!("spm_layers = {}", self.spm_layers),
            format!("variant = {}", self.variant.name()),
        ];
        lines.sort();
        lines.join("\n")
    }

    pub fn model_config(&self, input_dim: usize, n_max: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            dk: self.dk,
            spm_layers: self.spm_layers,
            conv_layers: self.conv_layers,
            conv_channels: self.conv_channels,
            mlp_hidden: self.mlp_hidden,
            n_max,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_through_echo() {
        let cfg = ExperimentConfig::default();
        let dir = std::env::temp_dir().join(format!("segmn-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.cfg");
        std::fs::write(&path, cfg.echo()).unwrap();
        let loaded = ExperimentConfig::from_file(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(loaded.echo(), cfg.echo());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        let err = cfg.set("learning_rate", "0.1").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut cfg = ExperimentConfig::default();
        let err = cfg.set("epochs", "many").unwrap_err();
        assert_eq!(err.to_string(), "config key `epochs`: cannot parse `many`");
        let err = cfg.set("variant", "both").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let dir = std::env::temp_dir().join(format!("segmn-cfg2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.cfg");
        std::fs::write(&path, "# comment\n\nseed = 42\nvariant = node\n").unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.variant, Variant::NodeOnly);
        assert_eq!(cfg.hidden, 64);
    }
}
