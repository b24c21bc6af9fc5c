use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

/// Ordered collection of parameters. Insertion order is the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Handle returned by [`ParamStore::insert`]; cheaper than name lookups in hot loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            grad: Tensor::zeros(value.shape()),
            momentum: Tensor::zeros(value.shape()),
            value,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grad` into the accumulator of `id`.
    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        self.params[id.0].grad.add_assign(grad)
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, s: f32) {
        for p in &mut self.params {
            p.grad.scale(s);
        }
    }

    /// Momentum SGD: `v ← m·v + g; p ← p − lr·v`, then zeroes the gradients.
    ///
    /// Fails before touching any parameter if a gradient is non-finite.
    pub fn sgd_step(&mut self, lr: f32, momentum: f32) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        for p in &mut self.params {
            let v = p.momentum.data_mut();
            let x = p.value.data_mut();
            for ((vi, xi), &gi) in v.iter_mut().zip(x.iter_mut()).zip(p.grad.data()) {
                *vi = momentum * *vi + gi;
                *xi -= lr * *vi;
            }
        }
        self.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f32) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::full(&[3], value)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_grad_leaves_params() {
        let (mut s, id) = store(1.5);
        s.sgd_step(0.1, 0.9).unwrap();
        assert_eq!(s.value(id).data(), &[1.5; 3]);
    }

    #[test]
    fn plain_step() {
        let (mut s, id) = store(1.0);
        s.accumulate(id, &Tensor::full(&[3], 1.0)).unwrap();
        s.sgd_step(0.1, 0.0).unwrap();
        assert!(s.value(id).data().iter().all(|&v| (v - 0.9).abs() < 1e-7));
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn momentum_recurrence() {
        let (mut s, id) = store(0.0);
        for _ in 0..2 {
            s.accumulate(id, &Tensor::full(&[3], 1.0)).unwrap();
            s.sgd_step(1.0, 0.9).unwrap();
        }
        assert!(s.value(id).data().iter().all(|&v| (v + 2.9).abs() < 1e-6));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = store(0.0);
        s.insert("other", Tensor::zeros(&[1])).unwrap();
        s.get_mut(id).grad.data_mut()[1] = f32::NAN;
        match s.sgd_step(0.1, 0.9) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.value(id).data(), &[0.0; 3]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = store(0.0);
        assert!(s.insert("w", Tensor::zeros(&[1])).is_err());
    }
}
