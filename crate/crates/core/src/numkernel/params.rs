use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named collection of model tensors.
///
/// Trainable entries carry a gradient buffer; non-trainable entries
/// (running statistics) are persisted in checkpoints but skipped by the
/// optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let tensor = if trainable { tensor.with_grad() } else { tensor };
        let id = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.insert(name, tensor, true)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.insert(name, tensor, false)
    }

    /// Registers a `fan_in x fan_out` matrix drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), values).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Adds `grad` into the gradient buffer of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) -> Result<()> {
        let entry = &mut self.entries[id.0];
        let shape = entry.tensor.shape().to_vec();
        let buf = entry
            .tensor
            .grad_mut()
            .ok_or_else(|| Error::Contract(format!("{} is not trainable", entry.name)))?;
        if buf.len() != grad.len() {
            return Err(Error::shape("accumulate_grad", &shape, &[grad.len()]));
        }
        buf.iter_mut().zip(grad).for_each(|(b, g)| *b += g);
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Overwrites values of every entry whose name matches, checking shapes.
    pub fn load_values(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for entry in &mut self.entries {
            let src = tensors.get(&entry.name).ok_or_else(|| {
                Error::Data(format!("checkpoint is missing tensor {}", entry.name))
            })?;
            if src.shape() != entry.tensor.shape() {
                return Err(Error::shape("load_values", entry.tensor.shape(), src.shape()));
            }
            entry.tensor.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|e| {
                let plain = Tensor::new(e.tensor.shape().to_vec(), e.tensor.values().to_vec())
                    .expect("valid tensor");
                (e.name.clone(), plain)
            })
            .collect()
    }
}
