use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Trainable parameters, in registration order.
///
/// Gradients accumulate across [`ParamStore::accumulate`] calls and are
/// cleared explicitly (the optimizer clears them after each step).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub const fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param {
            name: name.to_string(),
            group: group.to_string(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialisation for a `fan_in × fan_out` weight.
    pub fn add_glorot<R: Rng>(&mut self, group: &str, name: &str, shape: &[usize], rng: &mut R) -> ParamId {
        let fan_in = shape[0] as f64;
        let fan_out = shape.iter().skip(1).product::<usize>().max(1) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        self.add_uniform(group, name, shape, limit, rng)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        group: &str,
        name: &str,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.add(group, name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn add_zeros(&mut self, group: &str, name: &str, shape: &[usize]) -> ParamId {
        self.add(group, name, Tensor::zeros(shape))
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

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Distinct group names, in first-registration order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn group_scalars(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            *out.entry(p.group.clone()).or_insert(0) += p.value.len();
        }
        out
    }

    /// Adds `grads` into the stored gradients, populating every parameter.
    pub fn accumulate(&mut self, grads: &Gradients) {
        assert_eq!(grads.grads.len(), self.params.len(), "gradient set from another store");
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            match &mut p.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn grad(&self, id: ParamId) -> Result<&Tensor> {
        let p = &self.params[id.0];
        p.grad.as_ref().ok_or_else(|| Error::MissingGrad(p.name.clone()))
    }
}

/// Gradients of one backward pass, one tensor per parameter of the store.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
