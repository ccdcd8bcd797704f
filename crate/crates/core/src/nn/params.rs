use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub(crate) struct Entry<R> {
    pub name: String,
    pub tensor: Tensor<R>,
    pub m: Vec<R>,
    pub v: Vec<R>,
}

/// Named trainable tensors plus AdamW state.
#[derive(Debug, Clone)]
pub struct ParameterStore<R = f32> {
    pub(crate) entries: Vec<Entry<R>>,
    index: HashMap<String, ParamId>,
    pub(crate) step: u64,
}

impl<R: Real> Default for ParameterStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParameterStore<R> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![R::zero(); n],
            Init::Ones => vec![R::one(); n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| Error::Config(format!("normal init: {e}")))?;
                (0..n).map(|_| R::lit(dist.sample(rng))).collect()
            }
        };
        self.insert(name.into(), Tensor::new(shape, data)?)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<R>) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        let n = tensor.numel();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            tensor,
            m: vec![R::zero(); n],
            v: vec![R::zero(); n],
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].tensor
    }

    pub fn value(&self, id: ParamId) -> &[R] {
        self.entries[id.0].tensor.data()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[R], &[R]) {
        let e = &self.entries[id.0];
        (&e.m, &e.v)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    /// Adds `grads` into every parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients<R>) {
        for (e, g) in self.entries.iter_mut().zip(&grads.grads) {
            let buf = e.tensor.grad_mut();
            if let Some(g) = g {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += *x;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = R::lit(max_norm / norm);
            for e in &mut self.entries {
                if let Some(g) = e.tensor.grad.as_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        norm
    }

    pub fn cast<S: Real>(&self) -> ParameterStore<S> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    m: e.m.iter().map(|x| S::lit(x.as_f64())).collect(),
                    v: e.v.iter().map(|x| S::lit(x.as_f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

/// Gradient buffers indexed by [`ParamId`]; `None` means all zeros.
#[derive(Debug, Clone)]
pub struct Gradients<R = f32> {
    pub(crate) grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn zeros_like(store: &ParameterStore<R>) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    /// Gradient of one parameter, materialized with zeros when unreached.
    pub fn get(&self, id: ParamId, store: &ParameterStore<R>) -> Vec<R> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![R::zero(); store.get(id).numel()],
        }
    }

    pub fn slot(&self, id: ParamId) -> Option<&[R]> {
        self.grads[id.0].as_deref()
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, n: usize) -> &mut Vec<R> {
        self.grads[id.0].get_or_insert_with(|| vec![R::zero(); n])
    }

    pub fn add_assign(&mut self, other: &Gradients<R>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(b) = b {
                match a {
                    Some(a) => a.iter_mut().zip(b).for_each(|(x, y)| *x += *y),
                    None => *a = Some(b.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: R) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Sums a list in order, so the result does not depend on how the list
    /// was produced.
    pub fn sum_ordered(store: &ParameterStore<R>, parts: &[Gradients<R>]) -> Self {
        let mut total = Self::zeros_like(store);
        for p in parts {
            total.add_assign(p);
        }
        total
    }
}
