use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding rows for drug tokens (padding and unknown slots included).
    pub drug_vocab: usize,
    pub target_vocab: usize,
    /// Maximum drug length L_d.
    pub drug_len: usize,
    /// Maximum target length L_t.
    pub target_len: usize,
    /// Drug embedding width d_e.
    pub drug_embed: usize,
    /// Filters in each gated convolution.
    pub drug_filters: usize,
    pub drug_kernel: usize,
    /// Latent width d_z.
    pub latent: usize,
    pub target_embed: usize,
    pub target_kernels: [usize; 3],
    /// Protein feature channels d_t.
    pub target_channels: usize,
    /// Top-k pooling size K.
    pub top_k: usize,
    pub heads: usize,
    pub mlp_hidden: Vec<usize>,
    /// Lower bound λ on the latent standard deviation.
    pub lambda: f64,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Full-size settings.
    pub fn standard(drug_vocab: usize, target_vocab: usize) -> Self {
        Self {
            drug_vocab,
            target_vocab,
            drug_len: 100,
            target_len: 1000,
            drug_embed: 128,
            drug_filters: 128,
            drug_kernel: 4,
            latent: 96,
            target_embed: 128,
            target_kernels: [4, 8, 12],
            target_channels: 128,
            top_k: 4,
            heads: 4,
            mlp_hidden: vec![1024, 512],
            lambda: 0.1,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small configuration used by gradient checks and smoke tests.
    pub fn micro(drug_vocab: usize, target_vocab: usize) -> Self {
        Self {
            drug_len: 12,
            target_len: 24,
            drug_embed: 8,
            drug_filters: 8,
            latent: 6,
            target_embed: 8,
            target_channels: 8,
            top_k: 2,
            heads: 2,
            mlp_hidden: vec![16, 8],
            ..Self::standard(drug_vocab, target_vocab)
        }
    }

    /// Length of the protein feature map, L'_t.
    pub fn conv_len(&self) -> Option<usize> {
        (self.target_len + 1).checked_sub(self.target_kernels[2])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("drug_vocab", self.drug_vocab),
            ("target_vocab", self.target_vocab),
            ("drug_len", self.drug_len),
            ("target_len", self.target_len),
            ("drug_embed", self.drug_embed),
            ("drug_filters", self.drug_filters),
            ("drug_kernel", self.drug_kernel),
            ("latent", self.latent),
            ("target_embed", self.target_embed),
            ("target_channels", self.target_channels),
            ("top_k", self.top_k),
            ("heads", self.heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.target_kernels.contains(&0) || self.mlp_hidden.contains(&0) {
            return Err(ModelError::Config("kernel widths and MLP widths must be positive".into()));
        }
        if self.target_channels % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_t = {} is not divisible by {} heads",
                self.target_channels, self.heads
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(ModelError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        match self.conv_len() {
            Some(l) if l >= self.top_k => {}
            _ => {
                return Err(ModelError::Config(format!(
                    "L_t = {} leaves fewer than K = {} positions after the width-{} valid convolution",
                    self.target_len, self.top_k, self.target_kernels[2]
                )))
            }
        }
        super::deconv_plan(self.drug_len)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_lengths() {
        let c = ModelConfig::standard(30, 26);
        assert_eq!(c.conv_len(), Some(989));
        c.validate().unwrap();
        ModelConfig::micro(30, 26).validate().unwrap();
    }

    #[test]
    fn rejects_bad_heads_and_lambda() {
        let mut c = ModelConfig::micro(10, 10);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro(10, 10);
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro(10, 10);
        c.target_len = 11;
        assert!(c.validate().is_err());
    }
}
