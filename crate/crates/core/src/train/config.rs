//! Run configuration: a flat TOML file with a documented key set. Every key
//! has a default except `model`; unknown keys are rejected so typos fail
//! loudly instead of silently training with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Family;
use crate::rewards::RewardConfig;

/// Which generator a run trains or loads. `Seq2SeqScratch` is the same
/// architecture as `Seq2Seq` but fine-tuned from random initialization — the
/// no-pretraining baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Causal,
    Seq2Seq,
    Seq2SeqScratch,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<ModelKind> {
        match name {
            "causal" => Ok(ModelKind::Causal),
            "seq2seq" => Ok(ModelKind::Seq2Seq),
            "seq2seq-scratch" => Ok(ModelKind::Seq2SeqScratch),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected causal, seq2seq, or seq2seq-scratch)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Causal => "causal",
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::Seq2SeqScratch => "seq2seq-scratch",
        }
    }

    pub fn family(self) -> Family {
        match self {
            ModelKind::Causal => Family::Causal,
            ModelKind::Seq2Seq | ModelKind::Seq2SeqScratch => Family::Seq2Seq,
        }
    }

    /// Family-specific fine-tuning learning rate.
    pub fn default_lr(self) -> f64 {
        match self {
            ModelKind::Causal => 5e-5,
            ModelKind::Seq2Seq | ModelKind::Seq2SeqScratch => 3e-5,
        }
    }
}

/// File locations. All optional — each command demands the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Corpus directory (train/valid/test/unpaired files).
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Frozen classifier checkpoint.
    #[serde(default)]
    pub classifier: Option<PathBuf>,
    /// Model checkpoint to start from.
    #[serde(default)]
    pub model_in: Option<PathBuf>,
    /// Where to write the trained model.
    #[serde(default)]
    pub model_out: Option<PathBuf>,
    /// Metrics log destination.
    #[serde(default)]
    pub metrics: Option<PathBuf>,
}

/// One training/evaluation run. Reward weights of zero disable the matching
/// term entirely, so the defaults describe plain supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `causal`, `seq2seq`, or `seq2seq-scratch`.
    pub model: String,
    /// Fine-tuning learning rate; omitted means the family default
    /// (5e-5 causal, 3e-5 seq2seq).
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Style-classifier reward weight.
    #[serde(default)]
    pub lambda_cls: f64,
    /// Self-critical BLEU reward weight.
    #[serde(default)]
    pub lambda_bleu: f64,
    /// Also reward a sampled source segment (causal model only).
    #[serde(default)]
    pub source_reward: bool,
    /// Fraction of the parallel training data to use.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Prefix every instance with its domain tag token.
    #[serde(default)]
    pub domain_tags: bool,
    /// Reward-free epochs before the policy-gradient terms switch on.
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub paths: Paths,
}

fn default_batch_size() -> usize {
    32
}
fn default_patience() -> usize {
    3
}
fn default_max_epochs() -> usize {
    50
}
fn default_fraction() -> f64 {
    1.0
}

impl TrainConfig {
    /// All-defaults config for one model kind.
    pub fn new(kind: ModelKind) -> TrainConfig {
        toml::from_str(&format!("model = {:?}", kind.name())).expect("minimal config parses")
    }

    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_path(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        TrainConfig::from_toml_str(&text)
    }

    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model)
    }

    /// Configured learning rate, or the family default.
    pub fn effective_lr(&self) -> Result<f64> {
        Ok(self.lr.unwrap_or(self.kind()?.default_lr()))
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda_cls: self.lambda_cls,
            lambda_bleu: self.lambda_bleu,
            source_reward: self.source_reward,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} not in (0, 1]", self.fraction)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        self.reward_config().validate(kind.family())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_documented_defaults() {
        let c = TrainConfig::from_toml_str("model = \"causal\"").unwrap();
        assert_eq!(c.kind().unwrap(), ModelKind::Causal);
        assert_eq!(c.effective_lr().unwrap(), 5e-5);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.patience, 3);
        assert_eq!(c.max_epochs, 50);
        assert_eq!(c.seed, 0);
        assert_eq!(c.fraction, 1.0);
        assert_eq!(c.warmup_epochs, 0);
        assert!(!c.reward_config().any_enabled());
        assert_eq!(c.paths, Paths::default());
    }

    #[test]
    fn family_learning_rates_differ() {
        let s = TrainConfig::from_toml_str("model = \"seq2seq\"").unwrap();
        assert_eq!(s.effective_lr().unwrap(), 3e-5);
        let scratch = TrainConfig::from_toml_str("model = \"seq2seq-scratch\"").unwrap();
        assert_eq!(scratch.effective_lr().unwrap(), 3e-5);
        assert_eq!(scratch.kind().unwrap().family(), Family::Seq2Seq);
        let explicit = TrainConfig::from_toml_str("model = \"seq2seq\"\nlr = 1e-3").unwrap();
        assert_eq!(explicit.effective_lr().unwrap(), 1e-3);
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
model = "causal"
lr = 5e-5
batch_size = 16
patience = 2
max_epochs = 10
seed = 7
lambda_cls = 1.0
lambda_bleu = 0.2
source_reward = true
fraction = 0.5
domain_tags = true
warmup_epochs = 1

[paths]
data_dir = "corpus"
classifier = "clf.ckpt"
model_in = "pre.ckpt"
model_out = "fine.ckpt"
metrics = "metrics.tsv"
"#;
        let c = TrainConfig::from_toml_str(text).unwrap();
        assert!(c.source_reward);
        assert_eq!(c.fraction, 0.5);
        assert_eq!(c.paths.data_dir.as_deref(), Some(Path::new("corpus")));
        let rc = c.reward_config();
        assert_eq!((rc.lambda_cls, rc.lambda_bleu), (1.0, 0.2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r = TrainConfig::from_toml_str("model = \"causal\"\nlearning_rate = 0.1");
        assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
        let r = TrainConfig::from_toml_str("model = \"causal\"\n[paths]\ndata = \"x\"");
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in [
            "model = \"gpt2\"",
            "model = \"causal\"\nfraction = 0.0",
            "model = \"causal\"\nfraction = 1.5",
            "model = \"causal\"\npatience = 0",
            "model = \"causal\"\nlr = -1.0",
            "model = \"causal\"\nlambda_cls = -0.5",
            "model = \"seq2seq\"\nsource_reward = true",
        ] {
            assert!(TrainConfig::from_toml_str(bad).is_err(), "accepted {bad:?}");
        }
    }
}
