//! Named trainable parameters with gradient accumulators and Adam state.

use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub moment1: Tensor,
    /// Adam second moment.
    pub moment2: Tensor,
    /// Adam step count for bias correction.
    pub steps: u64,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        let moment1 = Tensor::zeros_like(&value);
        let moment2 = Tensor::zeros_like(&value);
        Parameter { name, value, grad, moment1, moment2, steps: 0 }
    }
}

/// All trainable weights of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Parameter::new(name.to_string(), value));
        ParamId(id)
    }

    /// Weight matrix with uniform init in [-range, range].
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        range: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-range..=range)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data))
    }

    /// Bias vector, zero-initialized.
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Add gradients produced by a backward pass into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        assert_eq!(grads.tensors.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(&grads.tensors) {
            p.grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Per-parameter gradients from one backward pass, parallel to the ParamSet.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(params: &ParamSet) -> Self {
        Gradients {
            tensors: params.params.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}
