use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
    /// Row that must stay at zero and never be updated (embedding padding row).
    pub pinned_row: Option<usize>,
}

/// Named parameter tensors, in registration order.
///
/// Values are reference counted so binding them into a [`super::Graph`] costs
/// nothing; updates go through [`ParamStore::value_mut`], which copies only if a
/// graph still holds the old value.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.add_with_pinned_row(name, value, None)
    }

    pub fn add_with_pinned_row(
        &mut self,
        name: impl Into<String>,
        mut value: Tensor,
        pinned_row: Option<usize>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        if let Some(row) = pinned_row {
            let (rows, cols) = value.dims2();
            if row >= rows {
                return Err(TensorError::Parameter {
                    op: "param",
                    message: format!("pinned row {row} out of range for {rows} rows"),
                });
            }
            value.data_mut()[row * cols..(row + 1) * cols].fill(0.0);
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value: Arc::new(value), pinned_row });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace a value, checking that the shape is unchanged.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = self.value(id);
        if current.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "param set",
                left: current.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.params[id.0].value = Arc::new(value);
        Ok(())
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}
