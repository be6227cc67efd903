use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::objects::{Activation, PenaltyNorm};

/// Everything needed to reproduce a training run. Serialized into every
/// checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs without dev-loss improvement before the learning rate decays.
    pub patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(with = "super::float")]
    pub tau: f64,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    /// Used when no dataset paths are given.
    pub synthetic: SyntheticConfig,
    pub synthetic_dev_examples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            lr: 0.0008,
            lr_decay: 0.5,
            patience: 3,
            batch_size: 32,
            epochs: 15,
            seed: 1,
            tau: 0.0,
            train_path: None,
            dev_path: None,
            synthetic: SyntheticConfig {
                num_examples: 2000,
                ..SyntheticConfig::default()
            },
            synthetic_dev_examples: 500,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_opt_usize(key: &str, value: &str) -> Result<Option<usize>> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "hidden",
        "embed",
        "context_heads",
        "question_heads",
        "g_hidden",
        "relation_dim",
        "f_hidden",
        "summary_dim",
        "alpha",
        "penalty_norm",
        "aux_weight",
        "augment_bias",
        "use_pooled_summary",
        "activation",
        "variant",
        "baseline_fc_na",
        "max_span_len",
        "lr",
        "lr_decay",
        "patience",
        "batch_size",
        "epochs",
        "seed",
        "tau",
        "train",
        "dev",
        "synthetic_train",
        "synthetic_dev",
        "answerable_ratio",
        "facts_per_example",
        "data_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        match key {
            "hidden" => m.hidden = parse(key, value)?,
            "embed" => m.embed = parse(key, value)?,
            "context_heads" => m.context_heads = parse(key, value)?,
            "question_heads" => m.question_heads = parse(key, value)?,
            "g_hidden" => m.g_hidden = parse_opt_usize(key, value)?,
            "relation_dim" => m.relation_dim = parse_opt_usize(key, value)?,
            "f_hidden" => m.f_hidden = parse_opt_usize(key, value)?,
            "summary_dim" => m.summary_dim = parse_opt_usize(key, value)?,
            "alpha" => m.alpha = parse(key, value)?,
            "penalty_norm" => {
                m.penalty_norm = match value {
                    "frobenius" => PenaltyNorm::Frobenius,
                    "squared_frobenius" => PenaltyNorm::SquaredFrobenius,
                    _ => return Err(Error::Config(format!("unknown penalty_norm {value:?}"))),
                }
            }
            "aux_weight" => m.aux_weight = parse(key, value)?,
            "augment_bias" => m.augment_bias = parse(key, value)?,
            "use_pooled_summary" => m.use_pooled_summary = parse(key, value)?,
            "activation" => {
                m.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("unknown activation {value:?}"))),
                }
            }
            "variant" => m.variant = Variant::parse(value)?,
            "baseline_fc_na" => {
                if parse::<bool>(key, value)? {
                    m.variant = Variant::BaselineFcNa;
                } else if m.variant == Variant::BaselineFcNa {
                    m.variant = Variant::RelationModule;
                }
            }
            "max_span_len" => m.max_span_len = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "train" => self.train_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "dev" => self.dev_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "synthetic_train" => self.synthetic.num_examples = parse(key, value)?,
            "synthetic_dev" => self.synthetic_dev_examples = parse(key, value)?,
            "answerable_ratio" => self.synthetic.answerable_ratio = parse(key, value)?,
            "facts_per_example" => self.synthetic.facts_per_example = parse(key, value)?,
            "data_seed" => self.synthetic.rng_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr must be > 0 and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }
}
