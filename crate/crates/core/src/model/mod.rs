//! The affinity model: dual-view drug encoder, salient protein encoder and the
//! cross-view attention head.

mod config;
mod drug;
mod fusion;
mod layers;
mod protein;

pub use config::ModelConfig;
pub use drug::{deconv_plan, ses_sample, DrugEncoder, DualView, DualViewLatent};
pub use fusion::{Attended, FusionPredictor, View};
pub use layers::{Dense, Mode, StepNoise};
pub use protein::{ProteinEncoder, SalientFeatures};

use crate::rng::{stream_rng, Stream};
use crate::tensor::{Graph, ParamStore, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Every intermediate of one forward pass.
pub struct ForwardTrace {
    pub prediction: Var,
    pub latent: DualView,
    pub h_conv: Var,
    pub salient: SalientFeatures,
    pub context_ins: Var,
    pub context_dis: Var,
    pub attention_ins: Attended,
    pub attention_dis: Attended,
}

/// Parameters plus the three sub-networks that read them.
#[derive(Debug, Clone)]
pub struct DtaModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub drug: DrugEncoder,
    pub protein: ProteinEncoder,
    pub fusion: FusionPredictor,
}

impl DtaModel {
    /// Registers and initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let drug = DrugEncoder::new(&mut store, &config, &mut rng)?;
        let protein = ProteinEncoder::new(&mut store, &config, &mut rng)?;
        let fusion = FusionPredictor::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, drug, protein, fusion })
    }

    /// Full forward for one drug/target pair.
    pub fn forward(
        &self,
        g: &mut Graph,
        drug_tokens: &[usize],
        target_tokens: &[usize],
        mode: &mut Mode,
    ) -> Result<ForwardTrace> {
        let ps = &self.store;
        let latent = self.drug.dual_view(g, ps, drug_tokens, self.config.lambda, mode)?;
        let h_conv = self.protein.conv_stack(g, ps, target_tokens, mode)?;
        let salient = self.protein.extract_salient(g, h_conv, self.config.top_k)?;
        let head = self.head(g, latent.z_ins, latent.z_dis, salient.values, mode)?;
        Ok(ForwardTrace {
            prediction: head.prediction,
            latent,
            h_conv,
            salient,
            context_ins: head.context_ins,
            context_dis: head.context_dis,
            attention_ins: head.attention_ins,
            attention_dis: head.attention_dis,
        })
    }

    /// Contexts, attention and prediction from the two drug latents and the
    /// salient protein features.
    pub fn head(&self, g: &mut Graph, z_ins: Var, z_dis: Var, h_t: Var, mode: &mut Mode) -> Result<HeadTrace> {
        let ps = &self.store;
        let f = &self.fusion;
        let context_ins = f.build_context(g, ps, z_ins, h_t, View::Instance)?;
        let context_dis = f.build_context(g, ps, z_dis, h_t, View::Distribution)?;
        let attention_ins = f.cross_attention(g, ps, h_t, context_ins, View::Instance)?;
        let attention_dis = f.cross_attention(g, ps, h_t, context_dis, View::Distribution)?;
        let prediction = f.predict(g, ps, attention_ins.output, attention_dis.output, mode)?;
        Ok(HeadTrace { prediction, context_ins, context_dis, attention_ins, attention_dis })
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, drug_tokens: &[usize], target_tokens: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let trace = self.forward(&mut g, drug_tokens, target_tokens, &mut Mode::Eval)?;
        Ok(g.value(trace.prediction).data()[0])
    }
}

pub struct HeadTrace {
    pub prediction: Var,
    pub context_ins: Var,
    pub context_dis: Var,
    pub attention_ins: Attended,
    pub attention_dis: Attended,
}
