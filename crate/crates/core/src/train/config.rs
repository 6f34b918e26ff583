use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{UnknownPolicy, Vocabulary};
use crate::model::ModelConfig;

use super::{Result, TrainError};

/// Optimization and architecture settings for one run.
///
/// The text form is flat `key = value` lines; see [`TrainConfig::KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub lambda: f64,
    /// `K`
    pub top_k: usize,
    /// `L_d`
    pub drug_len: usize,
    /// `L_t`
    pub target_len: usize,
    /// `d_z`
    pub latent: usize,
    /// `d_t`
    pub target_channels: usize,
    pub heads: usize,
    pub mlp_hidden: Vec<usize>,
    pub seed: u64,
    /// `d_e`, shared by the drug and residue embeddings.
    pub embed: usize,
    /// Filters per gated drug convolution.
    pub filters: usize,
    pub unknown_tokens: UnknownPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 20,
            weight_decay: 1e-4,
            dropout: 0.1,
            lambda: 0.1,
            top_k: 4,
            drug_len: 100,
            target_len: 1000,
            latent: 96,
            target_channels: 128,
            heads: 4,
            mlp_hidden: vec![1024, 512],
            seed: 0,
            embed: 128,
            filters: 128,
            unknown_tokens: UnknownPolicy::Reject,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 18] = [
        "learning_rate",
        "batch_size",
        "max_epochs",
        "patience",
        "weight_decay",
        "dropout",
        "lambda",
        "K",
        "L_d",
        "L_t",
        "d_z",
        "d_t",
        "heads",
        "mlp_hidden",
        "seed",
        "d_e",
        "filters",
        "unknown_tokens",
    ];

    /// The small network used for tests and smoke runs.
    pub fn micro() -> Self {
        Self {
            batch_size: 32,
            top_k: 2,
            drug_len: 12,
            target_len: 24,
            latent: 6,
            target_channels: 8,
            heads: 2,
            mlp_hidden: vec![16, 8],
            embed: 8,
            filters: 8,
            ..Self::default()
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| TrainError::Config(format!("`{key}`: cannot parse {v:?}")))
        }
        let v = value.trim();
        match key.trim() {
            "learning_rate" => self.learning_rate = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "K" => self.top_k = num(key, v)?,
            "L_d" => self.drug_len = num(key, v)?,
            "L_t" => self.target_len = num(key, v)?,
            "d_z" => self.latent = num(key, v)?,
            "d_t" => self.target_channels = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "d_e" => self.embed = num(key, v)?,
            "filters" => self.filters = num(key, v)?,
            "mlp_hidden" => {
                let inner = v.trim_start_matches('[').trim_end_matches(']');
                self.mlp_hidden = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?;
            }
            "unknown_tokens" => {
                self.unknown_tokens = match v {
                    "reject" => UnknownPolicy::Reject,
                    "map" => UnknownPolicy::MapToUnknown,
                    _ => return Err(TrainError::Config(format!("`unknown_tokens` must be reject or map, got {v:?}"))),
                }
            }
            other => return Err(TrainError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(TrainError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, in [`Self::KEYS`] order. Parses back to an equal config.
    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.mlp_hidden.iter().map(|h| h.to_string()).collect();
        let policy = match self.unknown_tokens {
            UnknownPolicy::Reject => "reject",
            UnknownPolicy::MapToUnknown => "map",
        };
        let values = [
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            self.weight_decay.to_string(),
            self.dropout.to_string(),
            self.lambda.to_string(),
            self.top_k.to_string(),
            self.drug_len.to_string(),
            self.target_len.to_string(),
            self.latent.to_string(),
            self.target_channels.to_string(),
            self.heads.to_string(),
            hidden.join(", "),
            self.seed.to_string(),
            self.embed.to_string(),
            self.filters.to_string(),
            policy.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        self.model_config(1, 1).validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Architecture for the given embedding table sizes.
    pub fn model_config(&self, drug_vocab: usize, target_vocab: usize) -> ModelConfig {
        ModelConfig {
            drug_len: self.drug_len,
            target_len: self.target_len,
            drug_embed: self.embed,
            drug_filters: self.filters,
            latent: self.latent,
            target_embed: self.embed,
            target_channels: self.target_channels,
            top_k: self.top_k,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden.clone(),
            lambda: self.lambda,
            dropout: self.dropout,
            ..ModelConfig::standard(drug_vocab, target_vocab)
        }
    }

    pub fn model_config_for(&self, drug: &Vocabulary, target: &Vocabulary) -> ModelConfig {
        self.model_config(drug.table_size(), target.table_size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::micro().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::micro();
        c.learning_rate = 1.234e-3;
        c.unknown_tokens = UnknownPolicy::MapToUnknown;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_overrides_and_errors() {
        let c = TrainConfig::from_text("# run\nK = 3\nmlp_hidden = [64, 32]\n\nlearning_rate=0.01 # fast\n").unwrap();
        assert_eq!(c.top_k, 3);
        assert_eq!(c.mlp_hidden, vec![64, 32]);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.batch_size, 256);

        let e = TrainConfig::from_text("bogus = 1").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        assert!(TrainConfig::from_text("K = 2\nK = 3").unwrap_err().to_string().contains("duplicate"));
        assert!(TrainConfig::from_text("K = x").unwrap_err().to_string().contains("`K`"));
        assert!(TrainConfig::from_text("d_t = 10\nheads = 4").is_err());
        assert!(TrainConfig::from_text("patience = 200\nmax_epochs = 100").is_err());
        assert!(TrainConfig::from_text("learning_rate = 0").is_err());
    }
}
