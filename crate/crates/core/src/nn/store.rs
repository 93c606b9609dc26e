use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors, each with a gradient slot of the same shape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

/// One `(name, shape, values)` triple of the checkpoint container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for e in &mut self.entries {
                e.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Like [`clip_grad_norm`](Self::clip_grad_norm), restricted to `ids`.
    pub fn clip_grad_norm_of(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let norm = ids
            .iter()
            .flat_map(|id| self.entries[id.0].grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for id in ids {
                self.entries[id.0].grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Flattens every parameter value, in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    /// Flattens every gradient, in registration order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data().iter().copied())
            .collect()
    }

    /// Overwrites every parameter value from a flat vector laid out as
    /// [`ParamStore::flat_values`].
    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.entries
            .iter()
            .map(|e| ParamRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                values: e.value.data().to_vec(),
            })
            .collect()
    }

    /// Loads values into an already-built store. Every parameter must be
    /// present with the same shape, and no extra records are allowed.
    pub fn load_records(&mut self, records: &[ParamRecord]) -> Result<()> {
        if records.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, model expects {}",
                records.len(),
                self.entries.len()
            )));
        }
        for rec in records {
            let id = self.find(&rec.name).ok_or_else(|| {
                Error::Config(format!("checkpoint parameter '{}' unknown to model", rec.name))
            })?;
            let shape = self.entries[id.0].value.shape();
            if rec.shape != shape {
                return Err(Error::Config(format!(
                    "parameter '{}' has shape {:?} in checkpoint, model expects {:?}",
                    rec.name, rec.shape, shape
                )));
            }
            let value = Tensor::new(shape, rec.values.clone())?;
            self.entries[id.0].value = value;
        }
        self.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutating_one_param_leaves_others() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(&[1.0, 2.0])).unwrap();
        let b = store.add("b", Tensor::row(&[1.0, 2.0])).unwrap();
        store.value_mut(a).data_mut()[0] = 9.0;
        assert_eq!(store.value(b).data(), &[1.0, 2.0]);
        assert_eq!(store.grad(a).shape(), store.value(a).shape());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.add("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn records_round_trip_and_shape_checked() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(&[0.25, -1.5])).unwrap();
        let recs = store.to_records();
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros([1, 2])).unwrap();
        other.load_records(&recs).unwrap();
        assert_eq!(other.flat_values(), vec![0.25, -1.5]);

        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros([2, 1])).unwrap();
        assert!(wrong.load_records(&recs).is_err());
    }
}
