use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Buffers (e.g. frozen feature statistics) are stored but never updated.
    pub trainable: bool,
}

/// Owner of every model tensor. Models hold [`ParamId`] handles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value, trainable: false });
        ParamId(self.entries.len() - 1)
    }

    /// Xavier-uniform initialised `fan_in × fan_out` weight.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| S::lit(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::matrix(fan_in, fan_out, data).expect("sized"))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, width: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[1, width]))
    }

    /// Gaussian-initialised table (embeddings).
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::lit(z * std)
            })
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("sized"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {} is {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Number of scalar trainable values.
    pub fn trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}

/// Gradients keyed by parameter, produced by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    map: BTreeMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.map.get(&id)
    }

    pub fn insert_or_add(&mut self, id: ParamId, g: Tensor<S>) {
        match self.map.get_mut(&id) {
            Some(cur) => {
                for (c, &x) in cur.data_mut().iter_mut().zip(g.data()) {
                    *c += x;
                }
            }
            None => {
                self.map.insert(id, g);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.map.contains_key(&id)
    }
}
