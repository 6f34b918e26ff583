use rand_chacha::ChaCha8Rng;

use crate::data::PAD_INDEX;
use crate::tensor::{glorot_uniform, Axis, Graph, Padding, ParamId, ParamStore, Tensor, TensorError, Var};

use super::layers::{conv_kernel, Dense, Mode};
use super::{ModelConfig, ModelError, Result};

#[derive(Debug, Clone, Copy)]
struct GatedLayer {
    linear_kernel: ParamId,
    linear_bias: ParamId,
    gate_kernel: ParamId,
    gate_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct DeconvLayer {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
}

/// Widths and strides of the three transposed convolutions that expand a
/// length-1 latent map to exactly `target_len` rows.
///
/// The first layer has stride 1 and width `a`, the next two stride 2 with
/// widths 4 and `w3 ∈ 4..=7`, giving `4a + 2 + w3` rows. Every length ≥ 10 is
/// reachable.
pub fn deconv_plan(target_len: usize) -> Result<[(usize, usize); 3]> {
    if target_len < 10 {
        return Err(ModelError::Config(format!(
            "deconvolution stack cannot produce length {target_len}; achievable lengths are 10 and above"
        )));
    }
    let w3 = 4 + (target_len - 6) % 4;
    let a = (target_len - 2 - w3) / 4;
    Ok([(a, 1), (4, 2), (w3, 2)])
}

/// Shared encoder (embedding, gated convolutions, μ/h_var projections) plus
/// the deconvolution stack used by the distribution-level view.
#[derive(Debug, Clone)]
pub struct DrugEncoder {
    embedding: ParamId,
    gated: Vec<GatedLayer>,
    mu: Dense,
    h_var: Dense,
    deconv: Vec<DeconvLayer>,
    drug_len: usize,
    embed: usize,
    latent: usize,
    dropout: f64,
}

/// Graph handles for both views of one drug.
#[derive(Debug, Clone, Copy)]
pub struct DualView {
    pub embedded: Var,
    pub mu_ins: Var,
    pub h_var_ins: Var,
    pub sigma_ins: Var,
    pub z_ins: Var,
    pub h_remap: Var,
    pub mu_dis: Var,
    pub h_var_dis: Var,
    pub sigma_dis: Var,
    pub z_dis: Var,
}

/// Values of the dual-view latents.
#[derive(Debug, Clone, PartialEq)]
pub struct DualViewLatent {
    pub mu_ins: Vec<f64>,
    pub h_var_ins: Vec<f64>,
    pub sigma_ins: Vec<f64>,
    pub z_ins: Vec<f64>,
    pub mu_dis: Vec<f64>,
    pub h_var_dis: Vec<f64>,
    pub sigma_dis: Vec<f64>,
    pub z_dis: Vec<f64>,
}

impl DualView {
    pub fn values(&self, g: &Graph) -> DualViewLatent {
        let v = |x: Var| g.value(x).data().to_vec();
        DualViewLatent {
            mu_ins: v(self.mu_ins),
            h_var_ins: v(self.h_var_ins),
            sigma_ins: v(self.sigma_ins),
            z_ins: v(self.z_ins),
            mu_dis: v(self.mu_dis),
            h_var_dis: v(self.h_var_dis),
            sigma_dis: v(self.sigma_dis),
            z_dis: v(self.z_dis),
        }
    }
}

/// Stochastic encoding: `σ = λ·exp(½·relu(h_var))`, `z = μ + ε ⊙ σ` when noise
/// is given, `z = μ` otherwise. Returns `(z, σ)`.
pub fn ses_sample(g: &mut Graph, mu: Var, h_var: Var, lambda: f64, noise: Option<Vec<f64>>) -> Result<(Var, Var)> {
    if !(lambda > 0.0) {
        return Err(
            TensorError::Parameter { op: "ses_sample", message: format!("lambda must be > 0, got {lambda}") }.into()
        );
    }
    let r = g.relu(h_var);
    let half = g.scale(r, 0.5);
    let e = g.exp(half);
    let sigma = g.scale(e, lambda);
    let z = match noise {
        Some(eps) => {
            let shape = g.shape(mu).to_vec();
            let eps = g.constant(Tensor::new(shape, eps)?);
            let spread = g.mul(eps, sigma)?;
            g.add(mu, spread)?
        }
        None => mu,
    };
    Ok((z, sigma))
}

fn check_floor(g: &Graph, sigma: Var, lambda: f64, view: &str) -> Result<()> {
    if let Some(v) = g.value(sigma).data().iter().find(|&&s| !(s >= lambda)) {
        return Err(ModelError::Invariant(format!("{view} sigma component {v} below lambda {lambda}")));
    }
    Ok(())
}

impl DrugEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (vocab, d_e, f, w) = (cfg.drug_vocab, cfg.drug_embed, cfg.drug_filters, cfg.drug_kernel);
        let embedding = store.add_with_pinned_row(
            "drug.embedding",
            glorot_uniform(rng, &[vocab, d_e], vocab, d_e),
            Some(PAD_INDEX),
        )?;
        let mut gated = Vec::new();
        for i in 0..3 {
            let c_in = if i == 0 { d_e } else { f };
            let name = format!("drug.gated{i}");
            gated.push(GatedLayer {
                linear_kernel: conv_kernel(store, &format!("{name}.linear.kernel"), [w, c_in, f], c_in, f, rng)?,
                linear_bias: store.add(format!("{name}.linear.bias"), Tensor::zeros(&[f]))?,
                gate_kernel: conv_kernel(store, &format!("{name}.gate.kernel"), [w, c_in, f], c_in, f, rng)?,
                gate_bias: store.add(format!("{name}.gate.bias"), Tensor::zeros(&[f]))?,
            });
        }
        let mu = Dense::new(store, "drug.mu", f, cfg.latent, rng)?;
        let h_var = Dense::new(store, "drug.h_var", f, cfg.latent, rng)?;

        let plan = deconv_plan(cfg.drug_len)?;
        let mut deconv = Vec::new();
        let mut c_in = cfg.latent;
        for (i, (width, stride)) in plan.into_iter().enumerate() {
            let name = format!("drug.deconv{i}");
            deconv.push(DeconvLayer {
                kernel: conv_kernel(store, &format!("{name}.kernel"), [width, d_e, c_in], c_in, d_e, rng)?,
                bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d_e]))?,
                stride,
            });
            c_in = d_e;
        }
        Ok(Self {
            embedding,
            gated,
            mu,
            h_var,
            deconv,
            drug_len: cfg.drug_len,
            embed: d_e,
            latent: cfg.latent,
            dropout: cfg.dropout,
        })
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    /// Deconvolution kernels and biases, in layer order.
    pub fn deconv_params(&self) -> Vec<ParamId> {
        self.deconv.iter().flat_map(|l| [l.kernel, l.bias]).collect()
    }

    /// Gate kernels and biases, in layer order.
    pub fn gate_params(&self) -> Vec<ParamId> {
        self.gated.iter().flat_map(|l| [l.gate_kernel, l.gate_bias]).collect()
    }

    /// Linear-path kernels and biases, in layer order.
    pub fn linear_params(&self) -> Vec<ParamId> {
        self.gated.iter().flat_map(|l| [l.linear_kernel, l.linear_bias]).collect()
    }

    pub fn embed(&self, g: &mut Graph, ps: &ParamStore, tokens: &[usize]) -> Result<Var> {
        if tokens.len() != self.drug_len {
            return Err(ModelError::Config(format!("expected {} drug tokens, got {}", self.drug_len, tokens.len())));
        }
        let table = g.param(ps, self.embedding);
        Ok(g.embedding(table, tokens, Some(PAD_INDEX))?)
    }

    /// Three layers of `conv_linear(x) ⊙ sigmoid(conv_gate(x))`, length preserving.
    pub fn gated_block(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.gated {
            let (lk, lb) = (g.param(ps, layer.linear_kernel), g.param(ps, layer.linear_bias));
            let (gk, gb) = (g.param(ps, layer.gate_kernel), g.param(ps, layer.gate_bias));
            let linear = g.conv1d(h, lk, lb, Padding::Same)?;
            let gate_pre = g.conv1d(h, gk, gb, Padding::Same)?;
            let gate = g.sigmoid(gate_pre);
            h = g.mul(linear, gate)?;
        }
        Ok(h)
    }

    /// Encoder E: gated block, mean over positions, then the μ and h_var projections.
    pub fn shared_encode(&self, g: &mut Graph, ps: &ParamStore, x: Var, mode: &mut Mode) -> Result<(Var, Var)> {
        let h = self.gated_block(g, ps, x)?;
        let h = g.dropout(h, self.dropout, mode.dropout_rng())?;
        let pooled = g.mean(h, Axis::Rows);
        let width = g.shape(pooled)[0];
        let row = g.reshape(pooled, &[1, width])?;
        let mu = self.mu.forward(g, ps, row)?;
        let h_var = self.h_var.forward(g, ps, row)?;
        let mu = g.reshape(mu, &[self.latent])?;
        let h_var = g.reshape(h_var, &[self.latent])?;
        Ok((mu, h_var))
    }

    /// Expands a latent vector to an L_d × d_e map through the transposed convolutions.
    pub fn remap(&self, g: &mut Graph, ps: &ParamStore, z: Var) -> Result<Var> {
        let mut h = g.reshape(z, &[1, self.latent])?;
        let last = self.deconv.len() - 1;
        for (i, layer) in self.deconv.iter().enumerate() {
            let (k, b) = (g.param(ps, layer.kernel), g.param(ps, layer.bias));
            h = g.conv_transpose1d(h, k, b, layer.stride)?;
            if i != last {
                h = g.relu(h);
            }
        }
        if g.shape(h) != [self.drug_len, self.embed] {
            return Err(ModelError::Invariant(format!(
                "remap produced {:?}, expected [{}, {}]",
                g.shape(h),
                self.drug_len,
                self.embed
            )));
        }
        Ok(h)
    }

    /// Instance view from the tokens, then the distribution view from the
    /// remapped instance sample through the same encoder, each with its own
    /// noise draw.
    pub fn dual_view(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        tokens: &[usize],
        lambda: f64,
        mode: &mut Mode,
    ) -> Result<DualView> {
        let embedded = self.embed(g, ps, tokens)?;
        let (mu_ins, h_var_ins) = self.shared_encode(g, ps, embedded, mode)?;
        let noise = mode.ses_noise(self.latent);
        let (z_ins, sigma_ins) = ses_sample(g, mu_ins, h_var_ins, lambda, noise)?;
        let h_remap = self.remap(g, ps, z_ins)?;
        let (mu_dis, h_var_dis) = self.shared_encode(g, ps, h_remap, mode)?;
        let noise = mode.ses_noise(self.latent);
        let (z_dis, sigma_dis) = ses_sample(g, mu_dis, h_var_dis, lambda, noise)?;
        check_floor(g, sigma_ins, lambda, "instance")?;
        check_floor(g, sigma_dis, lambda, "distribution")?;
        Ok(DualView { embedded, mu_ins, h_var_ins, sigma_ins, z_ins, h_remap, mu_dis, h_var_dis, sigma_dis, z_dis })
    }
}
