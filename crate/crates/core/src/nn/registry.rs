use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Named trainable arrays in registration order.
///
/// A name is registered once and may be referenced by any number of network
/// branches; every reference contributes to the same gradient buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterRegistry {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
/// `None` marks a parameter the loss does not reach.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn is_zero(&self, id: ParamId) -> bool {
        self.get(id).map_or(true, |g| g.iter().all(|&v| v == 0.0))
    }
}

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return invalid(format!("parameter {name:?} already registered"));
        }
        if !value.is_finite() {
            return invalid(format!("parameter {name:?} has non-finite values"));
        }
        let id = ParamId(self.params.len());
        let grad = vec![0.0; value.len()];
        self.params.push(Parameter { name: name.to_string(), value, grad });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Weights drawn from `U(-b, b)` with `b = gain / sqrt(fan_in)`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name:?}")))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        Ok(self.param(self.id(name)?))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Add a backward pass's gradients into the accumulated buffers, in
    /// registration order.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                for (acc, v) in p.grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Plain SGD: `w <- w - lr * grad`, then clear gradients.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            for (w, g) in p.value.data.iter_mut().zip(p.grad.iter_mut()) {
                *w -= lr * *g;
                *g = 0.0;
            }
        }
    }

    /// Sum of squared gradients over every entry.
    pub fn grad_norm_sq(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut reg = ParameterRegistry::new();
        let id = reg.register("w", Tensor::from_vec(vec![1.0])).unwrap();
        reg.param_mut(id).grad[0] = 1.0;
        reg.sgd_step(0.1);
        assert!((reg.param(id).value.data[0] - 0.9).abs() < 1e-15);
        assert_eq!(reg.param(id).grad[0], 0.0);
    }

    #[test]
    fn sgd_with_zero_gradients_is_identity() {
        let mut reg = ParameterRegistry::new();
        reg.register("a", Tensor::from_vec(vec![1.5, -2.0])).unwrap();
        let before = reg.clone();
        reg.sgd_step(0.5);
        assert_eq!(reg, before);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut reg = ParameterRegistry::new();
        reg.register_zeros("a", &[2]).unwrap();
        assert!(reg.register_zeros("a", &[2]).is_err());
        assert!(reg.id("b").is_err());
    }
}
