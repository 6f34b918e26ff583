use rand_chacha::ChaCha8Rng;

use crate::tensor::{Axis, Graph, ParamId, ParamStore, Tensor, Var};

use super::layers::{Dense, Mode};
use super::{ModelConfig, ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Instance,
    Distribution,
}

#[derive(Debug, Clone, Copy)]
struct AttentionParams {
    query: Dense,
    key: Dense,
    value: Dense,
    output: Dense,
}

/// Output of one cross-view attention, with the per-head weight matrices.
#[derive(Debug, Clone)]
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Context projections, per-view multi-head attention, layer norm and MLP.
#[derive(Debug, Clone)]
pub struct FusionPredictor {
    context_ins: Dense,
    context_dis: Dense,
    attention_ins: AttentionParams,
    attention_dis: AttentionParams,
    ln_gain: ParamId,
    ln_shift: ParamId,
    mlp: Vec<Dense>,
    channels: usize,
    heads: usize,
    dropout: f64,
    ln_eps: f64,
}

impl FusionPredictor {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d_t = cfg.target_channels;
        let ctx_in = cfg.latent + d_t;
        let context_ins = Dense::new(store, "fusion.context_ins", ctx_in, d_t, rng)?;
        let context_dis = Dense::new(store, "fusion.context_dis", ctx_in, d_t, rng)?;
        let mut attention = |name: &str| -> Result<AttentionParams> {
            Ok(AttentionParams {
                query: Dense::new(store, &format!("{name}.query"), d_t, d_t, rng)?,
                key: Dense::new(store, &format!("{name}.key"), d_t, d_t, rng)?,
                value: Dense::new(store, &format!("{name}.value"), d_t, d_t, rng)?,
                output: Dense::new(store, &format!("{name}.output"), d_t, d_t, rng)?,
            })
        };
        let attention_ins = attention("fusion.attention_ins")?;
        let attention_dis = attention("fusion.attention_dis")?;
        let ln_gain = store.add("fusion.ln.gain", Tensor::filled(&[2 * d_t], 1.0))?;
        let ln_shift = store.add("fusion.ln.shift", Tensor::zeros(&[2 * d_t]))?;
        let mut mlp = Vec::new();
        let mut width = 2 * d_t;
        for (i, &h) in cfg.mlp_hidden.iter().chain(std::iter::once(&1)).enumerate() {
            mlp.push(Dense::new(store, &format!("fusion.mlp{i}"), width, h, rng)?);
            width = h;
        }
        Ok(Self {
            context_ins,
            context_dis,
            attention_ins,
            attention_dis,
            ln_gain,
            ln_shift,
            mlp,
            channels: d_t,
            heads: cfg.heads,
            dropout: cfg.dropout,
            ln_eps: cfg.layer_norm_eps,
        })
    }

    /// Weight and bias of the context projection for `view`.
    pub fn context_params(&self, view: View) -> (ParamId, ParamId) {
        let d = match view {
            View::Instance => self.context_ins,
            View::Distribution => self.context_dis,
        };
        (d.weight, d.bias)
    }

    /// Every parameter of the attention block for `view`.
    pub fn attention_params(&self, view: View) -> Vec<ParamId> {
        let a = match view {
            View::Instance => self.attention_ins,
            View::Distribution => self.attention_dis,
        };
        [a.query, a.key, a.value, a.output].iter().flat_map(|d| [d.weight, d.bias]).collect()
    }

    /// Final linear layer of the MLP.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        let d = self.mlp[self.mlp.len() - 1];
        (d.weight, d.bias)
    }

    pub fn layer_norm_params(&self) -> (ParamId, ParamId) {
        (self.ln_gain, self.ln_shift)
    }

    pub fn mlp_params(&self) -> Vec<ParamId> {
        self.mlp.iter().flat_map(|d| [d.weight, d.bias]).collect()
    }

    /// `relu([1_K zᵀ ‖ H_t] W + b)`.
    pub fn build_context(&self, g: &mut Graph, ps: &ParamStore, z: Var, h_t: Var, view: View) -> Result<Var> {
        let k = match g.shape(h_t) {
            [k, c] if *c == self.channels => *k,
            s => return Err(ModelError::Config(format!("H_t must be K × {}, got {s:?}", self.channels))),
        };
        let tiled = g.row_broadcast(z, k)?;
        let joint = g.concat(&[tiled, h_t], Axis::Cols)?;
        let dense = match view {
            View::Instance => self.context_ins,
            View::Distribution => self.context_dis,
        };
        let pre = dense.forward(g, ps, joint)?;
        Ok(g.relu(pre))
    }

    /// Multi-head attention with queries from H_t and keys/values from the context.
    pub fn cross_attention(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        h_t: Var,
        context: Var,
        view: View,
    ) -> Result<Attended> {
        let p = match view {
            View::Instance => self.attention_ins,
            View::Distribution => self.attention_dis,
        };
        let q = p.query.forward(g, ps, h_t)?;
        let k = p.key.forward(g, ps, context)?;
        let v = p.value.forward(g, ps, context)?;
        let head_dim = self.channels / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let qh = g.slice_cols(q, start, head_dim)?;
            let kh = g.slice_cols(k, start, head_dim)?;
            let vh = g.slice_cols(v, start, head_dim)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let a = g.softmax_rows(scores);
            heads.push(g.matmul(a, vh)?);
            weights.push(a);
        }
        let joined = g.concat(&heads, Axis::Cols)?;
        let output = p.output.forward(g, ps, joined)?;
        Ok(Attended { output, weights })
    }

    /// `MLP(LN([mean(O_ins) ‖ mean(O_dis)]))`, a shape-`[1]` prediction.
    pub fn predict(&self, g: &mut Graph, ps: &ParamStore, o_ins: Var, o_dis: Var, mode: &mut Mode) -> Result<Var> {
        if g.shape(o_ins) != g.shape(o_dis) {
            return Err(ModelError::Config(format!(
                "view outputs differ in shape: {:?} vs {:?}",
                g.shape(o_ins),
                g.shape(o_dis)
            )));
        }
        let m_ins = g.mean(o_ins, Axis::Rows);
        let m_dis = g.mean(o_dis, Axis::Rows);
        let joint = g.concat(&[m_ins, m_dis], Axis::Rows)?;
        let width = g.shape(joint)[0];
        let row = g.reshape(joint, &[1, width])?;
        let (gain, shift) = (g.param(ps, self.ln_gain), g.param(ps, self.ln_shift));
        let mut h = g.layer_norm(row, gain, shift, self.ln_eps)?;
        let last = self.mlp.len() - 1;
        for (i, layer) in self.mlp.iter().enumerate() {
            h = layer.forward(g, ps, h)?;
            if i != last {
                h = g.relu(h);
                h = g.dropout(h, self.dropout, mode.dropout_rng())?;
            }
        }
        Ok(g.reshape(h, &[1])?)
    }
}
