use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Rng, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// How a parameter was initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Uniform in `[-bound, bound]`.
    Uniform {
        bound: f64,
    },
    Constant {
        value: f64,
    },
}

impl InitSpec {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(fan_in: usize) -> Self {
        InitSpec::Uniform { bound: 1.0 / (fan_in.max(1) as f64).sqrt() }
    }

    pub fn sample<T: Scalar>(&self, shape: &[usize], rng: &mut Rng) -> Tensor<T> {
        match *self {
            InitSpec::Uniform { bound } => {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::of(rng.uniform(-bound, bound))).collect();
                Tensor::new(shape, data).expect("shape product matches")
            }
            InitSpec::Constant { value } => Tensor::full(shape, T::of(value)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub init: InitSpec,
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, init: InitSpec, shape: &[usize], rng: &mut Rng) -> Result<ParamId> {
        let value = init.sample(shape, rng);
        self.insert(name, value, init)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: InitSpec) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad, init });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Records every parameter on `tape` and returns the handles in id order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().enumerate().map(|(i, p)| tape.param(ParamId(i), p.value.clone())).collect()
    }

    /// Adds the gradients from a backward pass onto the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            if let Some(g) = g {
                let acc = self.params[id.0].grad.data_mut();
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
            }
        }
    }
}
