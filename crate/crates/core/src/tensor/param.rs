use std::collections::HashSet;

use super::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<E: Real = f32> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<E: Real = f32> {
    params: Vec<Parameter<E>>,
}

impl<E: Real> ParamSet<E> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter, returning its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<E>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Parameter<E> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter<E> {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<E>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<E>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a graph leaf; index `i` of the result is
    /// parameter `i`.
    pub fn bind(&self, graph: &mut Graph<E>) -> Vec<Var> {
        self.params.iter().map(|p| graph.variable(p.value.clone())).collect()
    }

    /// Overwrites each parameter's gradient with the one found in `grads`.
    pub fn store_grads(&mut self, grads: &mut Gradients<E>, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::Graph("binding does not match parameter set".into()));
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            p.grad = grads.take_or_zeros(v, p.value.shape())?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(E::zero());
        }
    }

    pub fn cast<F: Real>(&self) -> ParamSet<F> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }

    /// Replaces values from `(name, tensor)` pairs; every parameter must be
    /// present with a matching shape.
    pub fn load_values(&mut self, entries: &[(String, Tensor<E>)]) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, t) in entries {
            if let Some(p) = self.by_name_mut(name) {
                if p.value.shape() != t.shape() {
                    return Err(Error::shape(format!(
                        "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = t.clone();
                seen.insert(name.as_str());
            }
        }
        if let Some(missing) = self.params.iter().find(|p| !seen.contains(p.name.as_str())) {
            return Err(Error::Format(format!("checkpoint lacks parameter {}", missing.name)));
        }
        Ok(())
    }
}
