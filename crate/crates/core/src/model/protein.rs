use rand_chacha::ChaCha8Rng;

use crate::data::PAD_INDEX;
use crate::tensor::{glorot_uniform, Graph, Padding, ParamId, ParamStore, Tensor, TensorError, Var};

use super::layers::{conv_kernel, Mode};
use super::{ModelConfig, ModelError, Result};

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    padding: Padding,
}

/// Residue embedding and three stacked convolutions: the first two keep the
/// length, the last one is valid, so `L'_t = L_t - w_3 + 1`.
#[derive(Debug, Clone)]
pub struct ProteinEncoder {
    embedding: ParamId,
    convs: Vec<ConvLayer>,
    target_len: usize,
    last_width: usize,
    dropout: f64,
}

/// Top-K activations per channel and the H_conv rows they came from.
#[derive(Debug, Clone)]
pub struct SalientFeatures {
    pub values: Var,
    /// K × d_t, row-major.
    pub source_positions: Vec<usize>,
}

impl ProteinEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (vocab, d) = (cfg.target_vocab, cfg.target_embed);
        let embedding = store.add_with_pinned_row(
            "protein.embedding",
            glorot_uniform(rng, &[vocab, d], vocab, d),
            Some(PAD_INDEX),
        )?;
        let mut convs = Vec::new();
        let mut c_in = d;
        let c_out = cfg.target_channels;
        for (i, &w) in cfg.target_kernels.iter().enumerate() {
            convs.push(ConvLayer {
                kernel: conv_kernel(store, &format!("protein.conv{i}.kernel"), [w, c_in, c_out], c_in, c_out, rng)?,
                bias: store.add(format!("protein.conv{i}.bias"), Tensor::zeros(&[c_out]))?,
                padding: if i == 2 { Padding::Valid } else { Padding::Same },
            });
            c_in = c_out;
        }
        Ok(Self {
            embedding,
            convs,
            target_len: cfg.target_len,
            last_width: cfg.target_kernels[2],
            dropout: cfg.dropout,
        })
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    pub fn conv_params(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|c| [c.kernel, c.bias]).collect()
    }

    /// Width of the final (valid) convolution; H_conv row `p` covers residues
    /// `p .. p + width`.
    pub fn receptive_width(&self) -> usize {
        self.last_width
    }

    /// H_conv for one target: embedding, conv → relu three times, dropout.
    pub fn conv_stack(&self, g: &mut Graph, ps: &ParamStore, tokens: &[usize], mode: &mut Mode) -> Result<Var> {
        if tokens.len() < self.last_width {
            return Err(ModelError::InputTooShort(format!(
                "target of {} tokens is shorter than the width-{} valid convolution",
                tokens.len(),
                self.last_width
            )));
        }
        if tokens.len() != self.target_len {
            return Err(ModelError::Config(format!(
                "expected {} target tokens, got {}",
                self.target_len,
                tokens.len()
            )));
        }
        let table = g.param(ps, self.embedding);
        let mut h = g.embedding(table, tokens, Some(PAD_INDEX))?;
        for layer in &self.convs {
            let (k, b) = (g.param(ps, layer.kernel), g.param(ps, layer.bias));
            let c = g.conv1d(h, k, b, layer.padding)?;
            h = g.relu(c);
        }
        Ok(g.dropout(h, self.dropout, mode.dropout_rng())?)
    }

    /// Per-channel top-K of H_conv.
    pub fn extract_salient(&self, g: &mut Graph, h_conv: Var, k: usize) -> Result<SalientFeatures> {
        let len = g.shape(h_conv)[0];
        if k == 0 || k > len {
            return Err(TensorError::Parameter {
                op: "extract_salient",
                message: format!("K = {k} must satisfy 1 ≤ K ≤ L'_t = {len}"),
            }
            .into());
        }
        let (values, source_positions) = g.topk_per_channel(h_conv, k)?;
        Ok(SalientFeatures { values, source_positions })
    }
}
