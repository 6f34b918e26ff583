use crate::tensor::{ParamStore, Tensor};

use super::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the `wd·θ` term added to every gradient.
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// First and second moments for every parameter of a store, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update of every parameter. `grads[i]` belongs to the
    /// i-th parameter; `None` means zero. Pinned rows are left untouched.
    ///
    /// The step is rejected before any state changes if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], hp: &AdamHyper) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TrainError::Config(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for ((_, p), g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(TrainError::Config(format!(
                        "gradient of `{}` has shape {:?}, parameter {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let pinned = store.get(id).pinned_row;
            let cols = store.get(id).value.shape().last().copied().unwrap_or(1);
            let theta = store.value_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for j in 0..theta.len() {
                if pinned == Some(j / cols) {
                    continue;
                }
                let g = grads[i].as_ref().map_or(0.0, |g| g.data()[j]) + hp.weight_decay * theta[j];
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
        Ok(())
    }
}
