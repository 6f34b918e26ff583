use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::rng::{counter2, stream_rng, Stream};
use crate::tensor::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, Var};

use super::Result;

/// Noise sources for one training forward pass.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub ses: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl StepNoise {
    /// Streams for record `item` of optimizer step `step`.
    pub fn for_item(seed: u64, step: u64, item: u64) -> Self {
        let c = counter2(step, item);
        Self { ses: stream_rng(seed, Stream::SesNoise, c), dropout: stream_rng(seed, Stream::Dropout, c) }
    }

    pub fn normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.ses.sample(StandardNormal)).collect()
    }
}

/// Training mode carries its noise; evaluation mode is deterministic
/// (z = μ, dropout off).
pub enum Mode<'a> {
    Eval,
    Train(&'a mut StepNoise),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn dropout_rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train(n) => Some(&mut n.dropout),
        }
    }

    pub(crate) fn ses_noise(&mut self, n: usize) -> Option<Vec<f64>> {
        match self {
            Mode::Eval => None,
            Mode::Train(noise) => Some(noise.normal(n)),
        }
    }
}

/// `x · W + b` with W of shape in × out.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, &[input, output], input, output))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        Ok(g.linear(x, w, b)?)
    }
}

/// Kernel of shape W × C_a × C_b with Glorot bounds from `width·C_in`, `width·C_out`.
pub(crate) fn conv_kernel(
    store: &mut ParamStore,
    name: &str,
    shape: [usize; 3],
    c_in: usize,
    c_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamId> {
    let w = shape[0];
    Ok(store.add(name, glorot_uniform(rng, &shape, w * c_in, w * c_out))?)
}
