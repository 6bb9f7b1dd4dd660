use std::collections::HashMap;

use rand::Rng;

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
    /// Frozen parameters still receive gradients but are skipped by the optimizer.
    pub frozen: bool,
}

impl<T: Real> Parameter<T> {
    fn new(name: String, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Parameter {
            name,
            value,
            grad,
            momentum,
            frozen: false,
        }
    }
}

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        value.ensure_finite(name)?;
        let id = self.params.len();
        self.params.push(Parameter::new(name.to_string(), value));
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn from the stream
    /// keyed by the parameter name so initial values do not depend on which
    /// other parameters exist.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        seed: u64,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.insert_uniform_bound(name, shape, bound, seed)
    }

    /// Uniform in `[-bound, bound]` from the stream keyed by the name.
    pub fn insert_uniform_bound(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        seed: u64,
    ) -> Result<ParamId> {
        let mut r = rng::stream(seed, &format!("init/{name}"), 0);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(r.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.params[i]),
            None => None,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same names, shapes and values in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let params = self
            .params
            .iter()
            .map(|p| Parameter {
                name: p.name.clone(),
                value: p.value.cast(),
                grad: p.grad.cast(),
                momentum: p.momentum.cast(),
                frozen: p.frozen,
            })
            .collect();
        ParamStore {
            params,
            index: self.index.clone(),
        }
    }
}
